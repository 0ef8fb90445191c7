//! Sweep solver against the dense nodal Newton reference, plus the
//! conservation identities every converged solution must satisfy.

use mphase_core::loss::total_loss;
use mphase_core::model::PhasedNetwork;
use mphase_core::powerflow::{solve, SolverSettings};
use mphase_testkit::{checks, fixtures, oracle};

fn tight() -> SolverSettings {
    SolverSettings { tolerance_pu: 1e-10, ..SolverSettings::default() }
}

fn max_voltage_gap_pu(network: &PhasedNetwork, a: &[Vec<num_complex::Complex64>], b: &[Vec<num_complex::Complex64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, bus) in network.buses().iter().enumerate() {
        for k in 0..bus.phases.len() {
            let gap = (a[i][k] - b[i][k]).norm() / bus.nominal_voltage;
            worst = worst.max(gap);
        }
    }
    worst
}

#[test]
fn sweep_matches_dense_oracle_on_every_fixture() {
    for (name, text) in fixtures::converging() {
        let network = fixtures::network(text);
        let sweep = solve(&network, &tight()).expect(name);
        assert!(sweep.converged, "{name}: sweep did not converge");
        let dense = oracle::solve_dense(&network);
        assert!(dense.converged, "{name}: dense oracle did not converge");
        let gap = max_voltage_gap_pu(&network, &sweep.bus_voltages, &dense.bus_voltages);
        assert!(gap < 1e-6, "{name}: solvers disagree by {gap} pu");
    }
}

#[test]
fn sweep_matches_dense_oracle_with_dg_injecting() {
    let cases = [
        (fixtures::SIX_BUS_ONE_DG, vec![300.0]),
        (fixtures::TWO_DG, vec![800.0, 200.0]),
    ];
    for (text, capacities) in cases {
        let network = fixtures::network(text).with_dg_capacities(&capacities);
        let sweep = solve(&network, &tight()).unwrap();
        assert!(sweep.converged);
        let dense = oracle::solve_dense(&network);
        assert!(dense.converged);
        let gap = max_voltage_gap_pu(&network, &sweep.bus_voltages, &dense.bus_voltages);
        assert!(gap < 1e-6, "DG case disagrees by {gap} pu");
    }
}

#[test]
fn kcl_closes_at_every_bus_on_every_fixture() {
    for (name, text) in fixtures::converging() {
        let network = fixtures::network(text);
        let solution = solve(&network, &tight()).expect(name);
        let residual = checks::max_kcl_relative(&network, &solution);
        assert!(residual < 1e-6, "{name}: KCL residual {residual}");
    }
}

#[test]
fn power_books_close_on_every_fixture() {
    for (name, text) in fixtures::converging() {
        let network = fixtures::network(text);
        let solution = solve(&network, &tight()).expect(name);
        let breakdown = total_loss(&network, &solution).unwrap();
        let residual_kw = checks::power_balance_residual_kw(&network, &solution);
        let relative = residual_kw / breakdown.load_power_kw.max(1.0);
        assert!(relative < 1e-6, "{name}: imbalance {residual_kw} kW ({relative} rel)");
    }
}

#[test]
fn power_books_close_with_dg_injecting() {
    let network = fixtures::network(fixtures::TWO_DG).with_dg_capacities(&[800.0, 200.0]);
    let solution = solve(&network, &tight()).unwrap();
    let breakdown = total_loss(&network, &solution).unwrap();
    let residual_kw = checks::power_balance_residual_kw(&network, &solution);
    assert!(residual_kw / breakdown.load_power_kw < 1e-6);
    assert_eq!(checks::dg_injection_kw(&network), 1000.0);
}

#[test]
fn per_segment_losses_match_the_dense_oracle_solution() {
    // Same loss formula applied to independently computed voltages and
    // currents: any systematic error in either solver would split them.
    let network = fixtures::network(fixtures::FOUR_BUS);
    let sweep = solve(&network, &tight()).unwrap();
    let dense = oracle::solve_dense(&network);
    assert!(dense.converged);

    let sweep_loss = total_loss(&network, &sweep).unwrap();
    for branch in network.branch_ids() {
        let id = network.branch_id_str(branch).to_string();
        let (from_id, to_id) = network.branch_endpoints(branch);
        let from_i = network.bus_index(from_id).unwrap();
        let to_i = network.bus_index(to_id).unwrap();
        let gain = oracle::branch_gain(&network, branch);
        let i_child = oracle::branch_current_from_voltages(&network, branch, &dense.bus_voltages);
        let mut dense_loss = 0.0;
        for (k, phase) in network.branch_phases(branch).iter().enumerate() {
            let fp = network.buses()[from_i].phases.index_of(phase).unwrap();
            let tp = network.buses()[to_i].phases.index_of(phase).unwrap();
            let v_from = dense.bus_voltages[from_i][fp];
            let v_to = dense.bus_voltages[to_i][tp];
            dense_loss += (v_from * (gain[k] * i_child[k]).conj()).re
                - (v_to * i_child[k].conj()).re;
        }
        dense_loss /= 1e3;
        let sweep_value = sweep_loss.per_segment_kw[&id];
        assert!(
            (sweep_value - dense_loss).abs() < 1e-6,
            "{id}: sweep {sweep_value} kW vs dense {dense_loss} kW"
        );
    }
}
