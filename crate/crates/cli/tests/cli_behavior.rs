//! End-to-end checks of the binary: exit codes, artifact files, and the
//! agreement between CLI output and the library it wraps.

use std::path::Path;
use std::process::{Command, Output};

use mphase_core::powerflow::{solve, SolverSettings};
use mphase_testkit::fixtures;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mphase-opf"))
        .args(args)
        .output()
        .expect("binary should execute")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("no exit code (killed by signal?)")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn write_feeder(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).expect("write feeder");
    path.to_str().expect("utf8 path").to_owned()
}

#[test]
fn validate_accepts_good_feeder() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "ok.feeder", fixtures::FOUR_BUS);
    let out = run(&["validate", &path]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).starts_with("OK"), "stdout: {}", stdout(&out));
}

#[test]
fn validate_rejects_cycle_with_tabbed_diagnostics() {
    let dir = tempfile::tempdir().expect("tempdir");
    let text = "\
bus a phases=a kv_ln=7.2 source=true
bus b phases=a kv_ln=7.2
line l1 from=a to=b phases=a z=[1+1j] amps=100
line l2 from=b to=a phases=a z=[1+1j] amps=100
";
    let path = write_feeder(dir.path(), "cycle.feeder", text);
    let out = run(&["validate", &path]);
    assert_eq!(code(&out), 2);
    let report = stdout(&out);
    assert!(!report.trim().is_empty());
    for line in report.lines() {
        let mut parts = line.splitn(2, '\t');
        let id = parts.next().unwrap_or("");
        let reason = parts.next().unwrap_or("");
        assert!(!id.is_empty() && !reason.is_empty(), "bad diagnostic line: {line:?}");
    }
}

#[test]
fn validate_reports_parse_error_with_position() {
    let dir = tempfile::tempdir().expect("tempdir");
    let text = "bus a phases=a kv_ln=7.2 source=true\nline l1 from=a to=b phases=a z=[nope] amps=1\n";
    let path = write_feeder(dir.path(), "broken.feeder", text);
    let out = run(&["validate", &path]);
    assert_eq!(code(&out), 1);
    let message = stderr(&out);
    // <path>:<line>:<col>: <reason>
    assert!(
        message.contains("broken.feeder:2:"),
        "expected positioned diagnostic, got: {message}"
    );
}

#[test]
fn missing_input_file_is_a_read_error() {
    let out = run(&["solve", "/definitely/not/here.feeder"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("here.feeder"));
}

#[test]
fn solve_artifacts_match_library_results() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "four.feeder", fixtures::FOUR_BUS);
    let out_dir = dir.path().join("artifacts");
    let out = run(&["solve", &path, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let network = fixtures::network(fixtures::FOUR_BUS);
    let solution = solve(&network, &SolverSettings::default()).expect("solves");
    assert!(solution.converged);

    let voltages = std::fs::read_to_string(out_dir.join("voltages.csv")).expect("voltages.csv");
    let mut rows = 0;
    for line in voltages.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 6, "row: {line}");
        let bus = network.bus_index(cells[0]).expect("bus id known");
        let phase_pos = network.buses()[bus]
            .phases
            .iter()
            .position(|p| p.letter().to_string() == cells[1])
            .expect("phase known");
        let expected = solution.bus_voltages[bus][phase_pos];
        let re: f64 = cells[2].parse().expect("v_real");
        let im: f64 = cells[3].parse().expect("v_imag");
        let scale = expected.norm().max(1.0);
        assert!((re - expected.re).abs() / scale < 1e-6, "{line}: re mismatch");
        assert!((im - expected.im).abs() / scale < 1e-6, "{line}: im mismatch");
        rows += 1;
    }
    assert_eq!(rows, 12, "four buses, three phases each");

    let currents = std::fs::read_to_string(out_dir.join("currents.csv")).expect("currents.csv");
    assert_eq!(currents.lines().count(), 1 + 9, "three branches, three phases each");

    let losses = std::fs::read_to_string(out_dir.join("losses.csv")).expect("losses.csv");
    assert!(losses.contains("summary,total_loss_kw,"));
    assert!(!losses.contains("converged,false"));
}

#[test]
fn solve_without_load_keeps_unity_voltage() {
    let dir = tempfile::tempdir().expect("tempdir");
    let text = "\
bus a phases=abc kv_ln=7.2 source=true
bus b phases=abc kv_ln=7.2
line l1 from=a to=b phases=abc amps=100 z=[1+2j 0 0 | 0 1+2j 0 | 0 0 1+2j]
";
    let path = write_feeder(dir.path(), "idle.feeder", text);
    let out_dir = dir.path().join("artifacts");
    let out = run(&["solve", &path, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let voltages = std::fs::read_to_string(out_dir.join("voltages.csv")).expect("voltages.csv");
    for line in voltages.lines().skip(1) {
        let v_pu: f64 = line.split(',').nth(4).expect("v_pu cell").parse().expect("number");
        assert!((v_pu - 1.0).abs() < 1e-9, "idle feeder should stay at 1 pu: {line}");
    }
}

#[test]
fn solve_nonconvergent_exits_three_with_footer() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "nc.feeder", fixtures::NONCONVERGENT);
    let out_dir = dir.path().join("artifacts");
    let out = run(&["solve", &path, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    for file in ["voltages.csv", "currents.csv", "losses.csv"] {
        let text = std::fs::read_to_string(out_dir.join(file)).expect(file);
        assert!(text.ends_with("converged,false\n"), "{file} missing footer");
    }
    let losses = std::fs::read_to_string(out_dir.join("losses.csv")).expect("losses.csv");
    assert_eq!(losses.lines().count(), 2, "no loss rows from a diverged state");
}

#[test]
fn solve_accepts_solver_overrides_and_rejects_study_keys() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "two.feeder", fixtures::TWO_BUS);
    let out_dir = dir.path().join("artifacts");
    let ok = run(&[
        "solve",
        &path,
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "solver.tolerance_pu=1e-9",
        "--set",
        "solver.max_iterations=200",
    ]);
    assert_eq!(code(&ok), 0, "stderr: {}", stderr(&ok));

    let rejected = run(&["solve", &path, "--set", "penalty.voltage=5"]);
    assert_eq!(code(&rejected), 4);
    assert!(stderr(&rejected).contains("penalty.voltage"));
}

#[test]
fn plan_requires_seed() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::SIX_BUS_ONE_DG);
    let out = run(&["plan", &path]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn plan_rejects_malformed_seed() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::SIX_BUS_ONE_DG);
    let out = run(&["plan", &path, "--seed", "3.5"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn plan_auto_seed_announces_choice() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::SIX_BUS_ONE_DG);
    let out_dir = dir.path().join("artifacts");
    let out = run(&["plan", &path, "--seed", "auto", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let first = stdout(&out);
    let announced = first.lines().next().expect("seed line");
    assert!(announced.starts_with("seed=") && announced.ends_with("(auto)"), "got: {announced}");
}

#[test]
fn plan_rejects_unknown_override_key() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::SIX_BUS_ONE_DG);
    let out = run(&["plan", &path, "--seed", "1", "--set", "engine.warp_factor=9"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("warp_factor"));
}

#[test]
fn plan_without_dg_units_is_misconfigured() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "plain.feeder", fixtures::FOUR_BUS);
    let out = run(&["plan", &path, "--seed", "1"]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("no DG units"));
}

#[test]
fn plan_pins_degenerate_bounds() {
    let dir = tempfile::tempdir().expect("tempdir");
    let text = "\
bus a phases=a kv_ln=7.2 source=true
bus b phases=a kv_ln=7.2
line l1 from=a to=b phases=a z=[0.5+1j] amps=200
load ld bus=b phases=a kw=600 kvar=150
dg fixed bus=b phases=a p_min_kw=120 p_max_kw=120
";
    let path = write_feeder(dir.path(), "pinned.feeder", text);
    let out_dir = dir.path().join("artifacts");
    let out = run(&["plan", &path, "--seed", "9", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let plan = std::fs::read_to_string(out_dir.join("plan.csv")).expect("plan.csv");
    let row = plan.lines().nth(1).expect("one DG row");
    let cells: Vec<&str> = row.split(',').collect();
    assert_eq!(cells[0], "fixed");
    let capacity: f64 = cells[2].parse().expect("capacity");
    assert_eq!(capacity, 120.0);
}

/// Same seed, same artifacts, byte for byte; only the wall-time line in the
/// summary may differ between runs.
#[test]
fn plan_is_reproducible_for_a_fixed_seed() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::TWO_DG);
    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&["plan", &path, "--seed", "42", "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    for file in ["plan.csv", "convergence.csv", "report.csv"] {
        let a = std::fs::read(out_a.join(file)).expect(file);
        let b = std::fs::read(out_b.join(file)).expect(file);
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let strip_wall_time = |text: String| -> String {
        text.lines().filter(|l| !l.starts_with("wall_time_s=")).collect::<Vec<_>>().join("\n")
    };
    let a = strip_wall_time(std::fs::read_to_string(out_a.join("summary.txt")).expect("summary"));
    let b = strip_wall_time(std::fs::read_to_string(out_b.join("summary.txt")).expect("summary"));
    assert_eq!(a, b);
}

#[test]
fn plan_runs_every_engine() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::SIX_BUS_ONE_DG);
    for engine in ["cfpso", "iwpso", "ga"] {
        let out_dir = dir.path().join(engine);
        let out = run(&[
            "plan",
            &path,
            "--engine",
            engine,
            "--seed",
            "5",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{engine} failed: {}", stderr(&out));
        let summary = std::fs::read_to_string(out_dir.join("summary.txt")).expect("summary");
        assert!(summary.contains(&format!("engine={engine}")));
    }
}

#[test]
fn engine_overrides_reach_the_search() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::SIX_BUS_ONE_DG);
    let out_dir = dir.path().join("artifacts");
    let out = run(&[
        "plan",
        &path,
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "engine.max_iterations=7",
        "--set",
        "engine.stall_iterations=7",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let convergence =
        std::fs::read_to_string(out_dir.join("convergence.csv")).expect("convergence.csv");
    assert_eq!(convergence.lines().count(), 1 + 7, "history capped by max_iterations");
}

#[test]
fn ga_rejects_pso_only_overrides() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::SIX_BUS_ONE_DG);
    let out = run(&["plan", &path, "--engine", "ga", "--seed", "1", "--set", "engine.c1=1.8"]);
    assert_eq!(code(&out), 4);
}

/// Both search engines should agree on where the metal goes; their sized
/// capacities land within one percent of each other on the two-unit feeder.
#[test]
fn engines_cross_validate_on_two_unit_feeder() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::TWO_DG);
    let mut sized: Vec<Vec<f64>> = Vec::new();
    for engine in ["cfpso", "ga"] {
        let out_dir = dir.path().join(engine);
        let out = run(&[
            "plan",
            &path,
            "--engine",
            engine,
            "--seed",
            "42",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{engine} failed: {}", stderr(&out));
        let plan = std::fs::read_to_string(out_dir.join("plan.csv")).expect("plan.csv");
        sized.push(
            plan.lines()
                .skip(1)
                .map(|row| row.split(',').nth(2).expect("capacity").parse().expect("number"))
                .collect(),
        );
    }
    let (pso, ga) = (&sized[0], &sized[1]);
    assert_eq!(pso.len(), 2);
    for (a, b) in pso.iter().zip(ga) {
        let scale = a.abs().max(1.0);
        assert!((a - b).abs() / scale < 0.01, "engines disagree: {pso:?} vs {ga:?}");
    }
}

#[test]
fn commands_never_touch_the_feeder_file() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = write_feeder(dir.path(), "dg.feeder", fixtures::SIX_BUS_ONE_DG);
    let before = std::fs::read(&path).expect("read feeder");
    let out_dir = dir.path().join("artifacts");
    run(&["validate", &path]);
    run(&["solve", &path, "--out", out_dir.to_str().unwrap()]);
    run(&["plan", &path, "--seed", "1", "--out", out_dir.to_str().unwrap()]);
    let after = std::fs::read(&path).expect("read feeder");
    assert_eq!(before, after, "a command modified its input file");
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = run(&["solve", "whatever.feeder", "--frobnicate"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn help_and_version_exit_zero() {
    let help = run(&["--help"]);
    assert_eq!(code(&help), 0);
    let text = stdout(&help);
    for needle in ["solver.tolerance_pu=1e-4", "engine.swarm_size=30", "engine.mutation_rate=0.1"]
    {
        assert!(text.contains(needle), "--help does not document default: {needle}");
    }
    assert_eq!(code(&run(&["--version"])), 0);
}
