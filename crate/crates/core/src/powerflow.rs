//! Forward-backward sweep load flow for radial unbalanced feeders.
//!
//! Each branch (line segment or transformer) is reduced to the same two-port
//! form: a per-phase voltage boost `t` followed by a series impedance block
//! `Z` on the child side, so `V_child = t V_parent - Z I_child` and
//! `I_parent = t I_child`. Lines have `t = 1` (or the regulator taps when one
//! rides the segment); transformers put their nameplate impedance on the
//! child-side ohm base and fold the voltage ratio and off-nominal tap into
//! `t`. The sweep alternates current accumulation from the leaves with
//! voltage propagation from the source until the largest per-unit voltage
//! change drops below tolerance.

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{
    radial_order, BranchId, BranchKind, ComplexMatrix, Connection, LoadModel, Phase,
    PhasedNetwork, TopologyError,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    /// Convergence threshold on the largest per-unit voltage change.
    pub tolerance_pu: f64,
    pub max_iterations: usize,
    /// Start candidate solves from nominal voltages; when false, the planner
    /// reuses the base-case solution as the starting point.
    pub flat_start: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { tolerance_pu: 1e-4, max_iterations: 100, flat_start: true }
    }
}

/// Voltages and currents indexed like the network's sorted collections:
/// `bus_voltages[i]` follows `network.buses()[i]` (one entry per phase in
/// canonical order), `branch_currents` holds child-side currents for line
/// segments first and transformers second.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub bus_voltages: Vec<Vec<Complex64>>,
    pub branch_currents: Vec<Vec<Complex64>>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
}

impl PowerFlowSolution {
    pub fn bus_voltage<'a>(
        &'a self,
        network: &PhasedNetwork,
        bus_id: &str,
    ) -> Option<&'a [Complex64]> {
        network
            .bus_index(bus_id)
            .map(|i| self.bus_voltages[i].as_slice())
    }

    pub fn phase_voltage(
        &self,
        network: &PhasedNetwork,
        bus_id: &str,
        phase: Phase,
    ) -> Option<Complex64> {
        let i = network.bus_index(bus_id)?;
        let k = network.buses()[i].phases.index_of(phase)?;
        Some(self.bus_voltages[i][k])
    }

    /// Child-side current of the named branch.
    pub fn branch_current<'a>(
        &'a self,
        network: &PhasedNetwork,
        branch_id: &str,
    ) -> Option<&'a [Complex64]> {
        let branch = network.find_branch(branch_id)?;
        Some(self.branch_currents[network.branch_flat_index(branch)].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("element {0} has a singular series impedance")]
    SingularElement(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("network is not consistent: {0}")]
    InvalidNetwork(String),
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
}

/// Per-phase voltage boost of a branch: regulator taps (or unity) for line
/// segments, the nominal voltage ratio corrected by the tap for transformers.
/// Parent-side current is the child-side current scaled by the same factor.
pub fn branch_boost(network: &PhasedNetwork, branch: BranchId) -> Vec<f64> {
    let n = network.branch_phases(branch).len();
    match branch.kind {
        BranchKind::Line => {
            let segment = &network.segments()[branch.index];
            network
                .regulators()
                .iter()
                .find(|r| r.on_segment == segment.id)
                .map(|r| r.per_phase_tap.clone())
                .unwrap_or_else(|| vec![1.0; n])
        }
        BranchKind::Transformer => {
            let t = &network.transformers()[branch.index];
            let from_nominal = network
                .bus(&t.from_bus)
                .map(|b| b.nominal_voltage)
                .unwrap_or(1.0);
            let to_nominal = network
                .bus(&t.to_bus)
                .map(|b| b.nominal_voltage)
                .unwrap_or(1.0);
            vec![to_nominal / (from_nominal * t.tap); n]
        }
    }
}

/// Branch reduced to boost-plus-impedance form, with phase index mappings
/// resolved against both end buses.
struct PreparedBranch {
    flat_index: usize,
    parent_bus: usize,
    child_bus: usize,
    boost: Vec<f64>,
    z: ComplexMatrix,
    /// Position of each branch phase within the parent bus phase list.
    parent_positions: Vec<usize>,
    /// Position of each branch phase within the child bus phase list.
    child_positions: Vec<usize>,
}

fn prepare_branches(network: &PhasedNetwork) -> Result<Vec<PreparedBranch>, SolveError> {
    let order = radial_order(network)?;
    let mut prepared = Vec::with_capacity(order.len());
    for ob in order {
        let phases = network.branch_phases(ob.branch);
        let n = phases.len();
        let parent = &network.buses()[ob.parent_bus];
        let child = &network.buses()[ob.child_bus];
        let map_positions = |bus: &crate::model::Bus| -> Result<Vec<usize>, SolveError> {
            phases
                .iter()
                .map(|p| {
                    bus.phases.index_of(p).ok_or_else(|| {
                        SolveError::InvalidNetwork(format!(
                            "branch {} carries phase {} missing at bus {}",
                            network.branch_id_str(ob.branch),
                            p.letter(),
                            bus.id
                        ))
                    })
                })
                .collect()
        };
        let parent_positions = map_positions(parent)?;
        let child_positions = map_positions(child)?;

        let boost = branch_boost(network, ob.branch);
        if boost.len() != n || boost.iter().any(|b| !b.is_finite() || *b == 0.0) {
            return Err(SolveError::InvalidNetwork(format!(
                "branch {} has a degenerate boost vector",
                network.branch_id_str(ob.branch)
            )));
        }
        let z = match ob.branch.kind {
            BranchKind::Line => {
                let segment = &network.segments()[ob.branch.index];
                if segment.z_matrix.dim() != n {
                    return Err(SolveError::InvalidNetwork(format!(
                        "segment {} impedance is {}x{0} over {n} phases",
                        segment.id,
                        segment.z_matrix.dim()
                    )));
                }
                segment.z_matrix.clone()
            }
            BranchKind::Transformer => {
                let t = &network.transformers()[ob.branch.index];
                // Nameplate impedance on the child-side ohm base; the base
                // uses the full rating spread over this bank's phases.
                let z_base =
                    child.nominal_voltage.powi(2) * n as f64 / (t.rating_kva * 1000.0);
                ComplexMatrix::diagonal(n, t.series_impedance_pu * z_base)
            }
        };

        if z.inverse().is_none() {
            return Err(SolveError::SingularElement(
                network.branch_id_str(ob.branch).to_string(),
            ));
        }

        prepared.push(PreparedBranch {
            flat_index: network.branch_flat_index(ob.branch),
            parent_bus: ob.parent_bus,
            child_bus: ob.child_bus,
            boost,
            z,
            parent_positions,
            child_positions,
        });
    }
    Ok(prepared)
}

/// Nominal magnitude with the standard rotation a = 0, b = -120, c = +120
/// degrees.
fn flat_voltages(network: &PhasedNetwork) -> Vec<Vec<Complex64>> {
    let rot_b = Complex64::new(-0.5, -(3.0_f64.sqrt()) / 2.0);
    let rot_c = Complex64::new(-0.5, 3.0_f64.sqrt() / 2.0);
    network
        .buses()
        .iter()
        .map(|bus| {
            bus.phases
                .iter()
                .map(|p| {
                    let rot = match p {
                        Phase::A => Complex64::ONE,
                        Phase::B => rot_b,
                        Phase::C => rot_c,
                    };
                    rot * bus.nominal_voltage
                })
                .collect()
        })
        .collect()
}

/// Per-bus per-phase current drawn from the network at the given voltages.
/// Loads draw positive current, capacitors and DG units show up as negative
/// draw. Shapes follow `bus_voltages`.
fn drawn_currents(
    network: &PhasedNetwork,
    voltages: &[Vec<Complex64>],
) -> Vec<Vec<Complex64>> {
    let mut drawn: Vec<Vec<Complex64>> = voltages
        .iter()
        .map(|v| vec![Complex64::ZERO; v.len()])
        .collect();

    for load in network.loads() {
        let Some(bus_i) = network.bus_index(&load.bus) else { continue };
        let bus = &network.buses()[bus_i];
        let v_nom = bus.nominal_voltage;
        let phases: Vec<Phase> = load.phases.iter().collect();
        let positions: Vec<Option<usize>> =
            phases.iter().map(|p| bus.phases.index_of(*p)).collect();
        match load.connection {
            Connection::Wye => {
                for (k, pos) in positions.iter().enumerate() {
                    let Some(pos) = pos else { continue };
                    let s = Complex64::new(load.per_phase_kw[k], load.per_phase_kvar[k]) * 1e3;
                    let v = voltages[bus_i][*pos];
                    drawn[bus_i][*pos] += load_current(load.model, s, v, v_nom);
                }
            }
            Connection::Delta => {
                let n = phases.len();
                if n < 2 {
                    continue;
                }
                let v_ll_nom = 3.0_f64.sqrt() * v_nom;
                for k in 0..n {
                    let (Some(px), Some(py)) = (positions[k], positions[(k + 1) % n]) else {
                        continue;
                    };
                    let s = Complex64::new(load.per_phase_kw[k], load.per_phase_kvar[k]) * 1e3;
                    let v_xy = voltages[bus_i][px] - voltages[bus_i][py];
                    let pair = load_current(load.model, s, v_xy, v_ll_nom);
                    drawn[bus_i][px] += pair;
                    drawn[bus_i][py] -= pair;
                }
            }
        }
    }

    for cap in network.capacitors() {
        if !cap.enabled {
            continue;
        }
        let Some(bus_i) = network.bus_index(&cap.bus) else { continue };
        let bus = &network.buses()[bus_i];
        for (k, phase) in cap.phases.iter().enumerate() {
            let Some(pos) = bus.phases.index_of(phase) else { continue };
            // Fixed admittance from the rated injection at nominal voltage.
            let b = cap.per_phase_kvar[k] * 1e3 / (bus.nominal_voltage * bus.nominal_voltage);
            drawn[bus_i][pos] += Complex64::new(0.0, b) * voltages[bus_i][pos];
        }
    }

    for dg in network.dg_units() {
        if dg.capacity_kw == 0.0 {
            continue;
        }
        let Some(bus_i) = network.bus_index(&dg.bus) else { continue };
        let bus = &network.buses()[bus_i];
        let p_per_phase = dg.capacity_kw * 1e3 / dg.phases.len() as f64;
        for phase in dg.phases.iter() {
            let Some(pos) = bus.phases.index_of(phase) else { continue };
            let v = voltages[bus_i][pos];
            // Unity power factor injection: delivers exactly p regardless of
            // the voltage it lands on.
            drawn[bus_i][pos] -= (Complex64::new(p_per_phase, 0.0) / v).conj();
        }
    }

    drawn
}

fn load_current(model: LoadModel, s_nominal: Complex64, v: Complex64, v_nom: f64) -> Complex64 {
    match model {
        LoadModel::ConstantPq => (s_nominal / v).conj(),
        LoadModel::ConstantZ => {
            let y = s_nominal.conj() / (v_nom * v_nom);
            y * v
        }
        LoadModel::ConstantI => {
            let magnitude = s_nominal.norm() / v_nom;
            let angle = v.arg() - s_nominal.arg();
            Complex64::from_polar(magnitude, angle)
        }
    }
}

/// One backward pass: child-side branch currents from the drawn currents.
fn backward_currents(
    network: &PhasedNetwork,
    prepared: &[PreparedBranch],
    voltages: &[Vec<Complex64>],
) -> Vec<Vec<Complex64>> {
    let mut accumulated = drawn_currents(network, voltages);
    let mut branch_currents: Vec<Vec<Complex64>> = vec![Vec::new(); network.branch_count()];
    for b in prepared.iter().rev() {
        let current: Vec<Complex64> = b
            .child_positions
            .iter()
            .map(|&pos| accumulated[b.child_bus][pos])
            .collect();
        for (k, &pos) in b.parent_positions.iter().enumerate() {
            accumulated[b.parent_bus][pos] += b.boost[k] * current[k];
        }
        branch_currents[b.flat_index] = current;
    }
    branch_currents
}

/// Load flow from a flat start.
pub fn solve(
    network: &PhasedNetwork,
    settings: &SolverSettings,
) -> Result<PowerFlowSolution, SolveError> {
    solve_from(network, settings, flat_voltages(network))
}

/// Load flow warm-started from a previous solution's voltages. Falls back to
/// a flat start when the shapes do not line up.
pub fn solve_warm(
    network: &PhasedNetwork,
    settings: &SolverSettings,
    start: &PowerFlowSolution,
) -> Result<PowerFlowSolution, SolveError> {
    let shapes_match = start.bus_voltages.len() == network.buses().len()
        && start
            .bus_voltages
            .iter()
            .zip(network.buses())
            .all(|(v, b)| v.len() == b.phases.len());
    let initial = if shapes_match {
        start.bus_voltages.clone()
    } else {
        flat_voltages(network)
    };
    solve_from(network, settings, initial)
}

fn solve_from(
    network: &PhasedNetwork,
    settings: &SolverSettings,
    mut voltages: Vec<Vec<Complex64>>,
) -> Result<PowerFlowSolution, SolveError> {
    if !(settings.tolerance_pu.is_finite() && settings.tolerance_pu > 0.0) {
        return Err(SolveError::InvalidSettings(format!(
            "tolerance_pu must be positive, got {}",
            settings.tolerance_pu
        )));
    }
    let prepared = prepare_branches(network)?;

    let mut converged = false;
    let mut iterations = 0;
    let mut max_mismatch = f64::INFINITY;

    for _ in 0..settings.max_iterations {
        iterations += 1;
        let branch_currents = backward_currents(network, &prepared, &voltages);

        max_mismatch = 0.0;
        for b in &prepared {
            let current = &branch_currents[b.flat_index];
            let z_drop = b.z.mul_vec(current);
            let nominal = network.buses()[b.child_bus].nominal_voltage;
            for (k, &pos) in b.child_positions.iter().enumerate() {
                let v_parent = voltages[b.parent_bus][b.parent_positions[k]];
                let v_new = b.boost[k] * v_parent - z_drop[k];
                let delta = (v_new - voltages[b.child_bus][pos]).norm() / nominal;
                if delta.is_finite() {
                    max_mismatch = max_mismatch.max(delta);
                } else {
                    max_mismatch = f64::INFINITY;
                }
                voltages[b.child_bus][pos] = v_new;
            }
        }

        if max_mismatch <= settings.tolerance_pu {
            converged = true;
            break;
        }
    }

    // Refresh currents against the final voltages so that downstream
    // bookkeeping (losses, limits, balance checks) sees one consistent state.
    let branch_currents = backward_currents(network, &prepared, &voltages);

    Ok(PowerFlowSolution {
        bus_voltages: voltages,
        branch_currents,
        converged,
        iterations,
        max_mismatch_pu: max_mismatch,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageViolation {
    pub bus: String,
    pub phase: Phase,
    pub v_pu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpacityViolation {
    pub branch: String,
    pub phase: Phase,
    pub amps: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitReport {
    pub voltage: Vec<VoltageViolation>,
    pub ampacity: Vec<AmpacityViolation>,
    pub min_v_pu: f64,
    pub max_v_pu: f64,
}

impl LimitReport {
    pub fn is_clean(&self) -> bool {
        self.voltage.is_empty() && self.ampacity.is_empty()
    }
}

/// Screens a converged solution against the network's voltage band and the
/// line ampacities. Violations come back in bus/branch id order.
pub fn check_limits(network: &PhasedNetwork, solution: &PowerFlowSolution) -> LimitReport {
    let mut report = LimitReport {
        voltage: Vec::new(),
        ampacity: Vec::new(),
        min_v_pu: f64::INFINITY,
        max_v_pu: f64::NEG_INFINITY,
    };
    for (bus, voltages) in network.buses().iter().zip(&solution.bus_voltages) {
        for (phase, v) in bus.phases.iter().zip(voltages) {
            let v_pu = v.norm() / bus.nominal_voltage;
            report.min_v_pu = report.min_v_pu.min(v_pu);
            report.max_v_pu = report.max_v_pu.max(v_pu);
            if v_pu < network.v_min_pu() || v_pu > network.v_max_pu() {
                report.voltage.push(VoltageViolation {
                    bus: bus.id.clone(),
                    phase,
                    v_pu,
                });
            }
        }
    }
    for (i, segment) in network.segments().iter().enumerate() {
        let flat = network.branch_flat_index(BranchId { kind: BranchKind::Line, index: i });
        let currents = &solution.branch_currents[flat];
        for (phase, current) in segment.phases.iter().zip(currents) {
            let amps = current.norm();
            if amps > segment.ampacity {
                report.ampacity.push(AmpacityViolation {
                    branch: segment.id.clone(),
                    phase,
                    amps,
                    limit: segment.ampacity,
                });
            }
        }
    }
    report
}
