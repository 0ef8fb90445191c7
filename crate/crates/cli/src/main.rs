//! Command-line front end for feeder studies.
//!
//! Three subcommands around one pipeline: `validate` checks a feeder file,
//! `solve` runs a load flow and writes CSV artifacts, `plan` runs the DG
//! sizing study. Exit codes are a stable contract: 0 success, 1 parse error,
//! 2 validation failure, 3 non-convergence, 4 study misconfiguration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use mphase_core::loss::total_loss;
use mphase_core::model::{BranchKind, PhasedNetwork, radial_order};
use mphase_core::parser::{build, parse, BuildError};
use mphase_core::planner::{plan as run_plan, PlanError, PlannerConfig};
use mphase_core::powerflow::{solve, PowerFlowSolution, SolveError};
use mphase_core::report::{compare_report, csv_number, run_summary, to_csv};
use mphase_optim::{BoundaryPolicy, EngineConfig, RandScope};

const EXIT_PARSE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;
const EXIT_MISCONFIGURED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "mphase-opf",
    version,
    about = "Load flow and DG sizing studies on multi-phase radial feeders",
    after_help = "Tunables for --set, with defaults (plan; solve accepts only solver.*):\n  \
solver.tolerance_pu=1e-4  solver.max_iterations=100  solver.flat_start=true\n  \
penalty.voltage=1e3  penalty.ampacity=1e3  penalty.nonconvergence=1e6\n  \
pso (cfpso, iwpso): engine.c1 engine.c2 (2.05 for cfpso, 2.0 for iwpso)\n  \
  engine.swarm_size=30  engine.max_iterations=100  engine.stall_iterations=20\n  \
  engine.boundary=absorbing|reflecting (absorbing)\n  \
  engine.rand_scope=per_dimension|per_particle (per_dimension)\n  \
  engine.inertia=0.7 (iwpso only)\n  \
ga: engine.population_size=30  engine.tournament_size=3\n  \
  engine.crossover_rate=0.9  engine.mutation_rate=0.1  engine.mutation_sigma=0.1\n  \
  engine.max_generations=100  engine.stall_generations=20"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a feeder file.
    Validate {
        /// Feeder description file.
        feeder: PathBuf,
    },
    /// Run a load flow and write voltages.csv, currents.csv, losses.csv.
    Solve {
        feeder: PathBuf,
        /// Directory for the CSV artifacts.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Override a tunable, e.g. --set solver.tolerance_pu=1e-6.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Size the feeder's DG units and write plan.csv, convergence.csv,
    /// report.csv, summary.txt.
    Plan {
        feeder: PathBuf,
        /// Search engine.
        #[arg(long, value_enum, default_value_t = EngineChoice::Cfpso)]
        engine: EngineChoice,
        /// RNG seed: an integer for a reproducible run, or `auto`.
        #[arg(long)]
        seed: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineChoice {
    Cfpso,
    Iwpso,
    Ga,
}

impl EngineChoice {
    fn to_config(self) -> EngineConfig {
        match self {
            EngineChoice::Cfpso => EngineConfig::CfPso(Default::default()),
            EngineChoice::Iwpso => EngineConfig::IwPso(Default::default()),
            EngineChoice::Ga => EngineConfig::Ga(Default::default()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            let code = match error.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_MISCONFIGURED,
            };
            let _ = error.print();
            return ExitCode::from(code);
        }
    };
    let status = match cli.command {
        Command::Validate { feeder } => cmd_validate(&feeder),
        Command::Solve { feeder, out, set } => cmd_solve(&feeder, &out, &set),
        Command::Plan { feeder, engine, seed, out, set } => {
            cmd_plan(&feeder, engine, seed.as_deref(), &out, &set)
        }
    };
    ExitCode::from(status)
}

/// Read, parse, and build a feeder, printing the contractual diagnostics.
/// Returns the exit code on failure.
fn load_network(path: &Path) -> Result<PhasedNetwork, u8> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(error) => {
            eprintln!("{}: {error}", path.display());
            return Err(EXIT_PARSE);
        }
    };
    let document = match parse(&text) {
        Ok(document) => document,
        Err(error) => {
            eprintln!("{}:{error}", path.display());
            return Err(EXIT_PARSE);
        }
    };
    match build(&document) {
        Ok(network) => Ok(network),
        Err(BuildError::ValidationFailed(violations)) => {
            for violation in &violations {
                println!("{violation}");
            }
            Err(EXIT_INVALID)
        }
        Err(error) => {
            println!("{error}");
            Err(EXIT_INVALID)
        }
    }
}

fn cmd_validate(feeder: &Path) -> u8 {
    match load_network(feeder) {
        Ok(network) => {
            println!("OK {} buses {} branches", network.buses().len(), network.branch_count());
            0
        }
        Err(code) => code,
    }
}

fn cmd_solve(feeder: &Path, out: &Path, set: &[String]) -> u8 {
    let network = match load_network(feeder) {
        Ok(network) => network,
        Err(code) => return code,
    };
    let mut config = PlannerConfig::default();
    if let Err(message) = apply_overrides(&mut config, set, false) {
        eprintln!("{message}");
        return EXIT_MISCONFIGURED;
    }
    let solution = match solve(&network, &config.solver) {
        Ok(solution) => solution,
        Err(error) => {
            eprintln!("{error}");
            return match error {
                SolveError::InvalidSettings(_) => EXIT_MISCONFIGURED,
                _ => EXIT_INVALID,
            };
        }
    };
    if let Err(error) = write_solve_artifacts(&network, &solution, out) {
        eprintln!("cannot write artifacts: {error}");
        return EXIT_MISCONFIGURED;
    }
    if !solution.converged {
        println!(
            "did not converge after {} iterations (mismatch {:.3e} pu)",
            solution.iterations, solution.max_mismatch_pu
        );
        return EXIT_NO_CONVERGENCE;
    }
    let breakdown = total_loss(&network, &solution).expect("converged solve");
    println!(
        "converged in {} iterations; total loss {} kW ({} % of load)",
        solution.iterations,
        csv_number(breakdown.total_loss_kw),
        csv_number(breakdown.loss_percent)
    );
    0
}

fn cmd_plan(
    feeder: &Path,
    engine: EngineChoice,
    seed: Option<&str>,
    out: &Path,
    set: &[String],
) -> u8 {
    let network = match load_network(feeder) {
        Ok(network) => network,
        Err(code) => return code,
    };
    let seed_value = match seed {
        None => {
            eprintln!("plan needs --seed <integer> or --seed auto");
            return EXIT_MISCONFIGURED;
        }
        Some("auto") => {
            let picked = entropy_seed();
            println!("seed={picked} (auto)");
            picked
        }
        Some(text) => match text.parse::<u64>() {
            Ok(value) => value,
            Err(_) => {
                eprintln!("--seed must be an unsigned integer or `auto`, got {text}");
                return EXIT_MISCONFIGURED;
            }
        },
    };

    let mut config = PlannerConfig { engine: engine.to_config(), ..PlannerConfig::default() };
    config.engine.set_seed(seed_value);
    if let Err(message) = apply_overrides(&mut config, set, true) {
        eprintln!("{message}");
        return EXIT_MISCONFIGURED;
    }

    let started = Instant::now();
    let result = match run_plan(&network, &config) {
        Ok(result) => result,
        Err(error @ (PlanError::BaseNotConverged | PlanError::OptimizedNotConverged)) => {
            eprintln!("{error}");
            return EXIT_NO_CONVERGENCE;
        }
        Err(error) => {
            eprintln!("{error}");
            return EXIT_MISCONFIGURED;
        }
    };
    let wall_time_s = started.elapsed().as_secs_f64();

    if let Err(error) = write_plan_artifacts(&network, &result, wall_time_s, out) {
        eprintln!("cannot write artifacts: {error}");
        return EXIT_MISCONFIGURED;
    }

    println!("engine={} seed={}", result.engine_name, result.seed);
    for (id, capacity) in result.dg_ids.iter().zip(&result.capacities_kw) {
        println!("{id}: {} kW", csv_number(*capacity));
    }
    println!(
        "loss: {} kW -> {} kW",
        csv_number(result.base_loss.total_loss_kw),
        csv_number(result.optimized_loss.total_loss_kw)
    );
    0
}

/// Seed source for `--seed auto`: wall clock nanoseconds folded with the
/// process id. Varied enough for exploratory runs; anything reproducible
/// should pass an explicit seed.
fn entropy_seed() -> u64 {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    let pid = u64::from(std::process::id());
    now.as_secs() ^ u64::from(now.subsec_nanos()).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (pid << 32)
}

fn apply_overrides(
    config: &mut PlannerConfig,
    pairs: &[String],
    allow_study_keys: bool,
) -> Result<(), String> {
    for pair in pairs {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(format!("--set expects KEY=VALUE, got {pair}"));
        };
        apply_one_override(config, key.trim(), value.trim(), allow_study_keys)
            .map_err(|why| format!("--set {key}: {why}"))?;
    }
    Ok(())
}

fn apply_one_override(
    config: &mut PlannerConfig,
    key: &str,
    value: &str,
    allow_study_keys: bool,
) -> Result<(), String> {
    fn real(value: &str) -> Result<f64, String> {
        value.parse().map_err(|_| format!("{value} is not a number"))
    }
    fn count(value: &str) -> Result<usize, String> {
        value.parse().map_err(|_| format!("{value} is not a non-negative integer"))
    }
    fn flag(value: &str) -> Result<bool, String> {
        match value {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(format!("{other} is not true/false")),
        }
    }

    match key {
        "solver.tolerance_pu" => {
            config.solver.tolerance_pu = real(value)?;
            return Ok(());
        }
        "solver.max_iterations" => {
            config.solver.max_iterations = count(value)?;
            return Ok(());
        }
        "solver.flat_start" => {
            config.solver.flat_start = flag(value)?;
            return Ok(());
        }
        _ => {}
    }
    if !allow_study_keys {
        return Err(format!("unknown key {key} (solve accepts only solver.*)"));
    }

    match key {
        "penalty.voltage" => config.voltage_penalty = real(value)?,
        "penalty.ampacity" => config.ampacity_penalty = real(value)?,
        "penalty.nonconvergence" => config.nonconvergence_penalty = real(value)?,
        "engine.boundary" => {
            let policy = match value {
                "absorbing" => BoundaryPolicy::Absorbing,
                "reflecting" => BoundaryPolicy::Reflecting,
                other => return Err(format!("{other} is not absorbing/reflecting")),
            };
            match &mut config.engine {
                EngineConfig::CfPso(p) => p.boundary = policy,
                EngineConfig::IwPso(p) => p.boundary = policy,
                EngineConfig::Ga(_) => return Err("ga has no boundary policy".into()),
            }
        }
        "engine.rand_scope" => {
            let scope = match value {
                "per_dimension" => RandScope::PerDimension,
                "per_particle" => RandScope::PerParticle,
                other => return Err(format!("{other} is not per_dimension/per_particle")),
            };
            match &mut config.engine {
                EngineConfig::CfPso(p) => p.rand_scope = scope,
                EngineConfig::IwPso(p) => p.rand_scope = scope,
                EngineConfig::Ga(_) => return Err("ga has no rand scope".into()),
            }
        }
        _ => match (&mut config.engine, key) {
            (EngineConfig::CfPso(p), "engine.c1") => p.c1 = real(value)?,
            (EngineConfig::CfPso(p), "engine.c2") => p.c2 = real(value)?,
            (EngineConfig::CfPso(p), "engine.swarm_size") => p.swarm_size = count(value)?,
            (EngineConfig::CfPso(p), "engine.max_iterations") => p.max_iterations = count(value)?,
            (EngineConfig::CfPso(p), "engine.stall_iterations") => {
                p.stall_iterations = count(value)?
            }
            (EngineConfig::IwPso(p), "engine.inertia") => p.inertia = real(value)?,
            (EngineConfig::IwPso(p), "engine.c1") => p.c1 = real(value)?,
            (EngineConfig::IwPso(p), "engine.c2") => p.c2 = real(value)?,
            (EngineConfig::IwPso(p), "engine.swarm_size") => p.swarm_size = count(value)?,
            (EngineConfig::IwPso(p), "engine.max_iterations") => p.max_iterations = count(value)?,
            (EngineConfig::IwPso(p), "engine.stall_iterations") => {
                p.stall_iterations = count(value)?
            }
            (EngineConfig::Ga(p), "engine.population_size") => p.population_size = count(value)?,
            (EngineConfig::Ga(p), "engine.tournament_size") => p.tournament_size = count(value)?,
            (EngineConfig::Ga(p), "engine.crossover_rate") => p.crossover_rate = real(value)?,
            (EngineConfig::Ga(p), "engine.mutation_rate") => p.mutation_rate = real(value)?,
            (EngineConfig::Ga(p), "engine.mutation_sigma") => p.mutation_sigma = real(value)?,
            (EngineConfig::Ga(p), "engine.max_generations") => p.max_generations = count(value)?,
            (EngineConfig::Ga(p), "engine.stall_generations") => {
                p.stall_generations = count(value)?
            }
            _ => return Err(format!("unknown key {key} for this engine")),
        },
    }
    Ok(())
}

/// Path distance from the source in meters, where defined. A line segment
/// without a length, anywhere on the path, leaves everything downstream
/// blank rather than silently wrong.
fn distances_m(network: &PhasedNetwork) -> Vec<Option<f64>> {
    let mut distance = vec![None; network.buses().len()];
    if let Some(source) = network.source_index() {
        distance[source] = Some(0.0);
    }
    if let Ok(order) = radial_order(network) {
        for ordered in order {
            distance[ordered.child_bus] = match (distance[ordered.parent_bus], ordered.branch.kind)
            {
                (Some(base), BranchKind::Line) => network.segments()[ordered.branch.index]
                    .length_m
                    .map(|len| base + len),
                (Some(base), BranchKind::Transformer) => Some(base),
                (None, _) => None,
            };
        }
    }
    distance
}

fn write_solve_artifacts(
    network: &PhasedNetwork,
    solution: &PowerFlowSolution,
    out: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    let distance = distances_m(network);

    let mut voltages = String::from("bus,phase,v_real,v_imag,v_pu,dist_m\n");
    for (i, bus) in network.buses().iter().enumerate() {
        for (k, phase) in bus.phases.iter().enumerate() {
            let v = solution.bus_voltages[i][k];
            let dist = distance[i].map(csv_number).unwrap_or_default();
            let _ = writeln!(
                voltages,
                "{},{},{},{},{},{}",
                bus.id,
                phase.letter(),
                csv_number(v.re),
                csv_number(v.im),
                csv_number(v.norm() / bus.nominal_voltage),
                dist
            );
        }
    }

    let mut currents = String::from("branch,phase,i_real,i_imag,amps\n");
    for branch in network.branch_ids() {
        let flat = network.branch_flat_index(branch);
        for (k, phase) in network.branch_phases(branch).iter().enumerate() {
            let i = solution.branch_currents[flat][k];
            let _ = writeln!(
                currents,
                "{},{},{},{},{}",
                network.branch_id_str(branch),
                phase.letter(),
                csv_number(i.re),
                csv_number(i.im),
                csv_number(i.norm())
            );
        }
    }

    let mut losses = String::from("kind,id,kw\n");
    if solution.converged {
        let breakdown = total_loss(network, solution).expect("converged solution");
        for branch in network.branch_ids() {
            let id = network.branch_id_str(branch);
            let kind = match branch.kind {
                BranchKind::Line => "line",
                BranchKind::Transformer => "transformer",
            };
            let _ = writeln!(losses, "{kind},{id},{}", csv_number(breakdown.per_segment_kw[id]));
        }
        let _ = writeln!(losses, "summary,line_loss_kw,{}", csv_number(breakdown.line_loss_kw));
        let _ = writeln!(
            losses,
            "summary,transformer_loss_kw,{}",
            csv_number(breakdown.transformer_loss_kw)
        );
        let _ = writeln!(losses, "summary,total_loss_kw,{}", csv_number(breakdown.total_loss_kw));
        let _ = writeln!(losses, "summary,load_power_kw,{}", csv_number(breakdown.load_power_kw));
        let _ = writeln!(losses, "summary,loss_percent,{}", csv_number(breakdown.loss_percent));
    }

    if !solution.converged {
        voltages.push_str("converged,false\n");
        currents.push_str("converged,false\n");
        losses.push_str("converged,false\n");
    }

    std::fs::write(out.join("voltages.csv"), voltages)?;
    std::fs::write(out.join("currents.csv"), currents)?;
    std::fs::write(out.join("losses.csv"), losses)?;
    Ok(())
}

fn write_plan_artifacts(
    network: &PhasedNetwork,
    result: &mphase_core::planner::DGPlanResult,
    wall_time_s: f64,
    out: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;

    let mut plan_csv = String::from("dg,bus,capacity_kw,p_min_kw,p_max_kw\n");
    for (unit, capacity) in network.dg_units().iter().zip(&result.capacities_kw) {
        let _ = writeln!(
            plan_csv,
            "{},{},{},{},{}",
            unit.id,
            unit.bus,
            csv_number(*capacity),
            csv_number(unit.p_min_kw),
            csv_number(unit.p_max_kw)
        );
    }

    let mut convergence = String::from("iteration,best_fitness\n");
    for (i, value) in result.history.iter().enumerate() {
        let _ = writeln!(convergence, "{},{}", i + 1, csv_number(*value));
    }

    std::fs::write(out.join("plan.csv"), plan_csv)?;
    std::fs::write(out.join("convergence.csv"), convergence)?;
    std::fs::write(out.join("report.csv"), to_csv(&compare_report(result)))?;
    std::fs::write(out.join("summary.txt"), run_summary(result, Some(wall_time_s)))?;
    Ok(())
}
