//! Random valid networks for round-trip properties and a text mutator for
//! parser fuzzing.

use mphase_core::model::{
    Bus, CapacitorBank, ComplexMatrix, Connection, DGUnit, LineSegment, Load, LoadModel,
    NetworkBuilder, Phase, PhaseSet, PhasedNetwork, Regulator, Transformer,
};
use num_complex::Complex64;
use rand::prelude::IndexedRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for tests; one seed, one stream.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const ALL_PHASES: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

fn random_subset(rng: &mut ChaCha8Rng, of: PhaseSet) -> PhaseSet {
    let available: Vec<Phase> = of.iter().collect();
    let take = rng.random_range(1..=available.len());
    let mut set = PhaseSet::EMPTY;
    let mut pool = available;
    for _ in 0..take {
        let idx = rng.random_range(0..pool.len());
        set = set.with(pool.swap_remove(idx));
    }
    set
}

fn random_symmetric_z(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
    let mut entries = vec![Complex64::ZERO; n * n];
    for r in 0..n {
        for c in r..n {
            let value = if r == c {
                Complex64::new(rng.random_range(0.2..1.2), rng.random_range(0.4..1.8))
            } else {
                Complex64::new(rng.random_range(0.01..0.15), rng.random_range(0.05..0.3))
            };
            entries[r * n + c] = value;
            entries[c * n + r] = value;
        }
    }
    ComplexMatrix::new(n, entries).expect("square by construction")
}

/// Build a random radial network that passes validation. Same seed, same
/// network.
pub fn random_network(rng: &mut ChaCha8Rng) -> PhasedNetwork {
    let bus_count = rng.random_range(2..=10);
    let voltages = [2400.0, 4160.0, 7200.0, 7967.4];

    let source_phases = match rng.random_range(0..10) {
        0..6 => PhaseSet::ABC,
        6..8 => {
            let mut set = PhaseSet::EMPTY;
            let mut pool = ALL_PHASES.to_vec();
            for _ in 0..2 {
                let idx = rng.random_range(0..pool.len());
                set = set.with(pool.swap_remove(idx));
            }
            set
        }
        _ => PhaseSet::single(*ALL_PHASES.as_slice().choose(rng).unwrap()),
    };
    let source_kv = *voltages.choose(rng).unwrap();

    let mut builder = NetworkBuilder::new();
    if rng.random_bool(0.3) {
        builder = builder.voltage_band(rng.random_range(0.85..0.95), rng.random_range(1.04..1.1));
    }

    let mut bus_phases = vec![source_phases];
    let mut bus_kv = vec![source_kv];
    builder = builder.bus(Bus {
        id: "bus0".into(),
        phases: source_phases,
        nominal_voltage: source_kv,
        is_source: true,
    });

    let mut line_ids: Vec<(String, PhaseSet)> = Vec::new();
    for i in 1..bus_count {
        let parent = rng.random_range(0..i);
        let phases = random_subset(rng, bus_phases[parent]);
        let as_transformer = rng.random_bool(0.15);
        let kv = if as_transformer {
            *voltages.choose(rng).unwrap()
        } else {
            bus_kv[parent]
        };
        bus_phases.push(phases);
        bus_kv.push(kv);
        builder = builder.bus(Bus {
            id: format!("bus{i}"),
            phases,
            nominal_voltage: kv,
            is_source: false,
        });
        if as_transformer {
            builder = builder.transformer(Transformer {
                id: format!("xf{i}"),
                from_bus: format!("bus{parent}"),
                to_bus: format!("bus{i}"),
                phases,
                rating_kva: rng.random_range(100.0..3000.0),
                series_impedance_pu: Complex64::new(
                    rng.random_range(0.004..0.03),
                    rng.random_range(0.02..0.1),
                ),
                tap: rng.random_range(0.95..1.05),
            });
        } else {
            let id = format!("line{i}");
            builder = builder.segment(LineSegment {
                id: id.clone(),
                from_bus: format!("bus{parent}"),
                to_bus: format!("bus{i}"),
                phases,
                z_matrix: random_symmetric_z(rng, phases.len()),
                ampacity: rng.random_range(100.0..1200.0),
                length_m: rng.random_bool(0.5).then(|| rng.random_range(20.0..3000.0)),
            });
            line_ids.push((id, phases));
        }
    }

    let mut load_count = 0;
    let mut cap_count = 0;
    let mut dg_count = 0;
    for (i, &phases_here) in bus_phases.iter().enumerate().skip(1) {
        for _ in 0..rng.random_range(0..=2u32) {
            load_count += 1;
            let phases = random_subset(rng, phases_here);
            let connection = if phases.len() >= 2 && rng.random_bool(0.3) {
                Connection::Delta
            } else {
                Connection::Wye
            };
            let model = match rng.random_range(0..3) {
                0 => LoadModel::ConstantPq,
                1 => LoadModel::ConstantZ,
                _ => LoadModel::ConstantI,
            };
            let n = phases.len();
            builder = builder.load(Load {
                id: format!("load{load_count}"),
                bus: format!("bus{i}"),
                phases,
                connection,
                model,
                per_phase_kw: (0..n).map(|_| rng.random_range(5.0..300.0)).collect(),
                per_phase_kvar: (0..n).map(|_| rng.random_range(0.0..120.0)).collect(),
            });
        }
        if rng.random_bool(0.2) {
            cap_count += 1;
            let phases = random_subset(rng, phases_here);
            let n = phases.len();
            builder = builder.capacitor(CapacitorBank {
                id: format!("cap{cap_count}"),
                bus: format!("bus{i}"),
                phases,
                per_phase_kvar: (0..n).map(|_| rng.random_range(10.0..300.0)).collect(),
                enabled: rng.random_bool(0.8),
            });
        }
        if dg_count < 2 && rng.random_bool(0.2) {
            dg_count += 1;
            let phases = random_subset(rng, phases_here);
            let p_min = rng.random_range(0.0..50.0);
            let p_max = p_min + rng.random_range(10.0..500.0);
            builder = builder.dg_unit(DGUnit {
                id: format!("dg{dg_count}"),
                bus: format!("bus{i}"),
                phases,
                p_min_kw: p_min,
                p_max_kw: p_max,
                capacity_kw: rng.random_range(p_min..=p_max),
            });
        }
    }

    let mut reg_count = 0;
    for (line_id, phases) in &line_ids {
        if rng.random_bool(0.2) {
            reg_count += 1;
            builder = builder.regulator(Regulator {
                id: format!("reg{reg_count}"),
                on_segment: line_id.clone(),
                per_phase_tap: (0..phases.len())
                    .map(|_| rng.random_range(0.95..1.06))
                    .collect(),
            });
        }
    }

    builder.build()
}

/// Corrupt feeder text at random: splice bytes, drop spans, duplicate lines,
/// truncate. The result is valid UTF-8 but rarely a valid feeder.
pub fn mutate_text(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut bytes = text.as_bytes().to_vec();
    let edits = rng.random_range(1..=4);
    for _ in 0..edits {
        if bytes.is_empty() {
            break;
        }
        match rng.random_range(0..5) {
            0 => {
                let noise = *b"[]|=\\#j.-e\n";
                let pos = rng.random_range(0..=bytes.len());
                let count = rng.random_range(1..=3);
                for _ in 0..count {
                    bytes.insert(pos, *noise.as_slice().choose(rng).unwrap());
                }
            }
            1 => {
                let start = rng.random_range(0..bytes.len());
                let end = (start + rng.random_range(1..=12)).min(bytes.len());
                bytes.drain(start..end);
            }
            2 => {
                let lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
                if let Some(line) = lines.as_slice().choose(rng) {
                    let mut dup = line.to_vec();
                    dup.push(b'\n');
                    let pos = rng.random_range(0..=bytes.len());
                    for (offset, b) in dup.into_iter().enumerate() {
                        bytes.insert((pos + offset).min(bytes.len()), b);
                    }
                }
            }
            3 => {
                let a = rng.random_range(0..bytes.len());
                let b = rng.random_range(0..bytes.len());
                bytes.swap(a, b);
            }
            _ => {
                let keep = rng.random_range(0..=bytes.len());
                bytes.truncate(keep);
            }
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}
