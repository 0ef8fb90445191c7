//! Dense nodal reference solver.
//!
//! Solves the same circuit as the production sweep but by a completely
//! different route: every non-source bus voltage is an unknown, the nodal
//! current balance is written as one simultaneous system, and Newton's
//! method with a finite-difference Jacobian drives the residual to zero.
//! Nothing here calls into the sweep machinery, so agreement between the
//! two is meaningful evidence.

use mphase_core::model::{BranchId, BranchKind, Connection, LoadModel, Phase, PhasedNetwork};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Phase rotation reference: a at 0, b at -120, c at +120 degrees.
pub fn nominal_rotation(phase: Phase) -> Complex64 {
    let half_sqrt3 = 3.0_f64.sqrt() / 2.0;
    match phase {
        Phase::A => Complex64::new(1.0, 0.0),
        Phase::B => Complex64::new(-0.5, -half_sqrt3),
        Phase::C => Complex64::new(-0.5, half_sqrt3),
    }
}

/// Per-phase series voltage gain across a branch, child side over parent
/// side: regulator taps for lines, turns ratio for transformers.
pub fn branch_gain(network: &PhasedNetwork, branch: BranchId) -> Vec<f64> {
    let n = network.branch_phases(branch).len();
    match branch.kind {
        BranchKind::Line => {
            let segment = &network.segments()[branch.index];
            for regulator in network.regulators() {
                if regulator.on_segment == segment.id {
                    return regulator.per_phase_tap.clone();
                }
            }
            vec![1.0; n]
        }
        BranchKind::Transformer => {
            let t = &network.transformers()[branch.index];
            let from_v = network
                .bus_index(&t.from_bus)
                .map(|i| network.buses()[i].nominal_voltage)
                .unwrap_or(1.0);
            let to_v = network
                .bus_index(&t.to_bus)
                .map(|i| network.buses()[i].nominal_voltage)
                .unwrap_or(1.0);
            vec![to_v / (from_v * t.tap); n]
        }
    }
}

/// Series impedance of a branch in ohms on the child side.
pub fn branch_impedance(network: &PhasedNetwork, branch: BranchId) -> DMatrix<Complex64> {
    let n = network.branch_phases(branch).len();
    match branch.kind {
        BranchKind::Line => {
            let segment = &network.segments()[branch.index];
            DMatrix::from_fn(n, n, |r, c| segment.z_matrix.get(r, c))
        }
        BranchKind::Transformer => {
            let t = &network.transformers()[branch.index];
            let child_v = network
                .bus_index(&t.to_bus)
                .map(|i| network.buses()[i].nominal_voltage)
                .unwrap_or(1.0);
            let z_base = child_v * child_v * n as f64 / (t.rating_kva * 1000.0);
            let z = t.series_impedance_pu * z_base;
            DMatrix::from_fn(n, n, |r, c| if r == c { z } else { Complex64::ZERO })
        }
    }
}

/// Currents drawn out of each bus by loads, capacitors, and DG units, at the
/// given voltages. DG injection appears as a negative draw.
pub fn drawn_currents(
    network: &PhasedNetwork,
    voltages: &[Vec<Complex64>],
) -> Vec<Vec<Complex64>> {
    let buses = network.buses();
    let mut drawn: Vec<Vec<Complex64>> =
        buses.iter().map(|b| vec![Complex64::ZERO; b.phases.len()]).collect();

    for load in network.loads() {
        let Some(bus_i) = network.bus_index(&load.bus) else { continue };
        let bus = &buses[bus_i];
        let positions: Vec<usize> = load
            .phases
            .iter()
            .filter_map(|p| bus.phases.index_of(p))
            .collect();
        if positions.len() != load.phases.len() {
            continue;
        }
        let n = positions.len();
        match load.connection {
            Connection::Wye => {
                for k in 0..n {
                    let s = Complex64::new(load.per_phase_kw[k], load.per_phase_kvar[k]) * 1e3;
                    let v = voltages[bus_i][positions[k]];
                    drawn[bus_i][positions[k]] +=
                        model_current(load.model, s, v, bus.nominal_voltage);
                }
            }
            Connection::Delta => {
                if n < 2 {
                    continue;
                }
                let v_base = 3.0_f64.sqrt() * bus.nominal_voltage;
                for k in 0..n {
                    let s = Complex64::new(load.per_phase_kw[k], load.per_phase_kvar[k]) * 1e3;
                    let x = positions[k];
                    let y = positions[(k + 1) % n];
                    let v_xy = voltages[bus_i][x] - voltages[bus_i][y];
                    let pair = model_current(load.model, s, v_xy, v_base);
                    drawn[bus_i][x] += pair;
                    drawn[bus_i][y] -= pair;
                }
            }
        }
    }

    for cap in network.capacitors() {
        if !cap.enabled {
            continue;
        }
        let Some(bus_i) = network.bus_index(&cap.bus) else { continue };
        let bus = &buses[bus_i];
        for (k, phase) in cap.phases.iter().enumerate() {
            let Some(pos) = bus.phases.index_of(phase) else { continue };
            let b = cap.per_phase_kvar[k] * 1e3 / (bus.nominal_voltage * bus.nominal_voltage);
            drawn[bus_i][pos] += Complex64::new(0.0, b) * voltages[bus_i][pos];
        }
    }

    for dg in network.dg_units() {
        if dg.capacity_kw == 0.0 {
            continue;
        }
        let Some(bus_i) = network.bus_index(&dg.bus) else { continue };
        let bus = &buses[bus_i];
        let p_per_phase = dg.capacity_kw * 1e3 / dg.phases.len() as f64;
        for phase in dg.phases.iter() {
            let Some(pos) = bus.phases.index_of(phase) else { continue };
            let v = voltages[bus_i][pos];
            drawn[bus_i][pos] -= (Complex64::new(p_per_phase, 0.0) / v).conj();
        }
    }

    drawn
}

fn model_current(model: LoadModel, s: Complex64, v: Complex64, v_base: f64) -> Complex64 {
    match model {
        LoadModel::ConstantPq => (s / v).conj(),
        LoadModel::ConstantZ => s.conj() / (v_base * v_base) * v,
        LoadModel::ConstantI => {
            let magnitude = s.norm() / v_base;
            Complex64::from_polar(magnitude, v.arg() - s.arg())
        }
    }
}

/// Child-side branch current implied by a voltage state: the series
/// impedance inverted against the boosted voltage difference.
pub fn branch_current_from_voltages(
    network: &PhasedNetwork,
    branch: BranchId,
    voltages: &[Vec<Complex64>],
) -> Vec<Complex64> {
    let buses = network.buses();
    let (from_id, to_id) = network.branch_endpoints(branch);
    let (Some(from_i), Some(to_i)) = (network.bus_index(from_id), network.bus_index(to_id))
    else {
        return Vec::new();
    };
    let phases = network.branch_phases(branch);
    let n = phases.len();
    let gain = branch_gain(network, branch);
    let z = branch_impedance(network, branch);
    let z_inv = z.try_inverse().expect("branch impedance is singular");

    let mut rhs = DVector::from_element(n, Complex64::ZERO);
    for (k, phase) in phases.iter().enumerate() {
        let fp = buses[from_i].phases.index_of(phase).expect("branch phase on parent");
        let tp = buses[to_i].phases.index_of(phase).expect("branch phase on child");
        rhs[k] = gain[k] * voltages[from_i][fp] - voltages[to_i][tp];
    }
    let i_child = &z_inv * rhs;
    i_child.iter().copied().collect()
}

/// Net current into every bus phase at the given voltages: branch currents
/// derived from voltage differences, minus shunt draws. Zero at the solution.
pub fn nodal_residuals(
    network: &PhasedNetwork,
    voltages: &[Vec<Complex64>],
) -> Vec<Vec<Complex64>> {
    let buses = network.buses();
    let mut residual: Vec<Vec<Complex64>> =
        buses.iter().map(|b| vec![Complex64::ZERO; b.phases.len()]).collect();

    for branch in network.branch_ids() {
        let (from_id, to_id) = network.branch_endpoints(branch);
        let (Some(from_i), Some(to_i)) = (network.bus_index(from_id), network.bus_index(to_id))
        else {
            continue;
        };
        let gain = branch_gain(network, branch);
        let i_child = branch_current_from_voltages(network, branch, voltages);
        for (k, phase) in network.branch_phases(branch).iter().enumerate() {
            let fp = buses[from_i].phases.index_of(phase).expect("branch phase on parent");
            let tp = buses[to_i].phases.index_of(phase).expect("branch phase on child");
            residual[to_i][tp] += i_child[k];
            residual[from_i][fp] -= gain[k] * i_child[k];
        }
    }

    let drawn = drawn_currents(network, voltages);
    for (bus_res, bus_drawn) in residual.iter_mut().zip(&drawn) {
        for (r, d) in bus_res.iter_mut().zip(bus_drawn) {
            *r -= d;
        }
    }
    residual
}

#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub bus_voltages: Vec<Vec<Complex64>>,
    pub converged: bool,
    pub iterations: usize,
}

/// Residual tolerance in amperes; fixture currents run tens to hundreds of
/// amps, so this leaves six-plus digits of voltage agreement.
const RESIDUAL_TOL_AMPS: f64 = 1e-6;
const MAX_NEWTON_STEPS: usize = 50;

/// Solve the network by Newton iteration on the full nodal system.
pub fn solve_dense(network: &PhasedNetwork) -> DenseSolution {
    let buses = network.buses();
    let mut offsets = vec![usize::MAX; buses.len()];
    let mut unknowns = 0usize;
    for (i, bus) in buses.iter().enumerate() {
        if !bus.is_source {
            offsets[i] = unknowns;
            unknowns += bus.phases.len();
        }
    }
    let dim = 2 * unknowns;

    let unpack = |x: &DVector<f64>| -> Vec<Vec<Complex64>> {
        buses
            .iter()
            .enumerate()
            .map(|(i, bus)| {
                bus.phases
                    .iter()
                    .enumerate()
                    .map(|(k, phase)| {
                        if bus.is_source {
                            nominal_rotation(phase) * bus.nominal_voltage
                        } else {
                            let j = offsets[i] + k;
                            Complex64::new(x[2 * j], x[2 * j + 1])
                        }
                    })
                    .collect()
            })
            .collect()
    };

    let residual = |x: &DVector<f64>| -> DVector<f64> {
        let voltages = unpack(x);
        let f = nodal_residuals(network, &voltages);
        let mut out = DVector::zeros(dim);
        for (i, bus) in buses.iter().enumerate() {
            if bus.is_source {
                continue;
            }
            for (k, residual) in f[i].iter().enumerate() {
                let j = offsets[i] + k;
                out[2 * j] = residual.re;
                out[2 * j + 1] = residual.im;
            }
        }
        out
    };

    let mut x = DVector::zeros(dim);
    for (i, bus) in buses.iter().enumerate() {
        if bus.is_source {
            continue;
        }
        for (k, phase) in bus.phases.iter().enumerate() {
            let v = nominal_rotation(phase) * bus.nominal_voltage;
            let j = offsets[i] + k;
            x[2 * j] = v.re;
            x[2 * j + 1] = v.im;
        }
    }

    if dim == 0 {
        return DenseSolution { bus_voltages: unpack(&x), converged: true, iterations: 0 };
    }

    let mut converged = false;
    let mut iterations = 0;
    for step in 0..MAX_NEWTON_STEPS {
        iterations = step + 1;
        let f = residual(&x);
        if f.amax() < RESIDUAL_TOL_AMPS {
            converged = true;
            break;
        }
        let mut jacobian = DMatrix::zeros(dim, dim);
        for col in 0..dim {
            let h = 1e-3 * 1.0_f64.max(x[col].abs() * 1e-4);
            let mut bumped = x.clone();
            bumped[col] += h;
            let fb = residual(&bumped);
            for row in 0..dim {
                jacobian[(row, col)] = (fb[row] - f[row]) / h;
            }
        }
        let Some(delta) = jacobian.lu().solve(&(-&f)) else {
            break;
        };
        x += &delta;
    }

    DenseSolution { bus_voltages: unpack(&x), converged, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn dense_solver_converges_on_all_fixture_networks() {
        for (name, text) in fixtures::converging() {
            let network = fixtures::network(text);
            let dense = solve_dense(&network);
            assert!(dense.converged, "{name} did not converge densely");
            let residuals = nodal_residuals(&network, &dense.bus_voltages);
            let worst = residuals
                .iter()
                .zip(network.buses())
                .filter(|(_, bus)| !bus.is_source)
                .flat_map(|(rows, _)| rows.iter().map(|r| r.norm()))
                .fold(0.0, f64::max);
            assert!(worst < 1e-5, "{name} residual {worst} A");
        }
    }

    #[test]
    fn two_bus_dense_solution_matches_hand_fixed_point() {
        let network = fixtures::network(fixtures::TWO_BUS);
        let dense = solve_dense(&network);
        assert!(dense.converged);
        let z = Complex64::new(0.3, 0.6);
        let s = Complex64::new(800e3, 200e3);
        let e = Complex64::new(7200.0, 0.0);
        let mut v = e;
        for _ in 0..300 {
            v = e - z * (s / v).conj();
        }
        let end_i = network.bus_index("end").unwrap();
        let got = dense.bus_voltages[end_i][0];
        assert!(
            (got - v).norm() < 1e-6,
            "dense {got} vs fixed point {v}"
        );
    }
}
