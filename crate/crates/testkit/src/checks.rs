//! Conservation checkers applied to sweep solutions.

use mphase_core::loss;
use mphase_core::model::PhasedNetwork;
use mphase_core::powerflow::PowerFlowSolution;
use num_complex::Complex64;

use crate::oracle;

/// Per-bus per-phase KCL residual built from the solution's stored branch
/// currents and shunt draws recomputed at the solved voltages. The source
/// bus is skipped; its surplus is by definition the feeder infeed.
pub fn kcl_residuals(
    network: &PhasedNetwork,
    solution: &PowerFlowSolution,
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
        let gain = oracle::branch_gain(network, branch);
        let current = &solution.branch_currents[network.branch_flat_index(branch)];
        for (k, phase) in network.branch_phases(branch).iter().enumerate() {
            if let Some(tp) = buses[to_i].phases.index_of(phase) {
                residual[to_i][tp] += current[k];
            }
            if let Some(fp) = buses[from_i].phases.index_of(phase) {
                residual[from_i][fp] -= gain[k] * current[k];
            }
        }
    }

    let drawn = oracle::drawn_currents(network, &solution.bus_voltages);
    for (i, bus) in buses.iter().enumerate() {
        if bus.is_source {
            for r in residual[i].iter_mut() {
                *r = Complex64::ZERO;
            }
            continue;
        }
        for (r, d) in residual[i].iter_mut().zip(&drawn[i]) {
            *r -= d;
        }
    }
    residual
}

/// Worst KCL residual relative to the currents actually flowing. The scale
/// is the largest branch current magnitude in the network, floored at one
/// milliamp so a no-load feeder divides cleanly.
pub fn max_kcl_relative(network: &PhasedNetwork, solution: &PowerFlowSolution) -> f64 {
    let scale = solution
        .branch_currents
        .iter()
        .flatten()
        .map(|i| i.norm())
        .fold(1e-3, f64::max);
    kcl_residuals(network, solution)
        .iter()
        .flatten()
        .map(|r| r.norm() / scale)
        .fold(0.0, f64::max)
}

/// Real power entering the feeder at the source bus, in kW, computed from
/// the solution's branch currents.
pub fn source_power_kw(network: &PhasedNetwork, solution: &PowerFlowSolution) -> f64 {
    let Some(source_i) = network.source_index() else { return 0.0 };
    let source = &network.buses()[source_i];
    let mut total = 0.0;
    for branch in network.branch_ids() {
        let (from_id, _) = network.branch_endpoints(branch);
        if from_id != source.id {
            continue;
        }
        let gain = oracle::branch_gain(network, branch);
        let current = &solution.branch_currents[network.branch_flat_index(branch)];
        for (k, phase) in network.branch_phases(branch).iter().enumerate() {
            let Some(fp) = source.phases.index_of(phase) else { continue };
            let i_from = gain[k] * current[k];
            total += (solution.bus_voltages[source_i][fp] * i_from.conj()).re;
        }
    }
    total / 1e3
}

/// Total DG injection in kW. Constant-power unity-pf units deliver exactly
/// their capacity, so no solve is needed.
pub fn dg_injection_kw(network: &PhasedNetwork) -> f64 {
    network.dg_units().iter().map(|d| d.capacity_kw).sum()
}

/// Absolute error of the power books in kW: source infeed minus
/// (load consumption minus DG injection plus series losses).
pub fn power_balance_residual_kw(
    network: &PhasedNetwork,
    solution: &PowerFlowSolution,
) -> f64 {
    let breakdown = loss::total_loss(network, solution).expect("converged solution");
    let source = source_power_kw(network, solution);
    (source - (breakdown.load_power_kw - dg_injection_kw(network) + breakdown.total_loss_kw))
        .abs()
}
