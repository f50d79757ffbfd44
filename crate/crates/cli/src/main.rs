//! `citymove` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use citymove_core::calibration::{calibrate, seed_spread, write_trace, CriteriaSpace, ObservedData};
use citymove_core::population::{write_housing_criteria, write_mobility_criteria};
use citymove_core::report::{
    compare, read_json, summarize, write_agents, write_history, write_json, SavedState,
};
use citymove_core::scenario::{read_interventions, Model, Scenario};
use citymove_core::simulation::{apply_interventions, resume, run_to_convergence};
use citymove_core::Error;

#[derive(Parser)]
#[command(name = "citymove", version, about = "Housing and commute-mode choice simulator")]
struct Cli {
    /// Worker threads for parallel sections; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and check a scenario and everything it references.
    Validate {
        scenario: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a scenario to convergence and write reports.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Fit the criteria to observed housing and mode-share data.
    Calibrate {
        scenario: PathBuf,
        #[arg(long)]
        observed_housing: PathBuf,
        #[arg(long)]
        observed_modes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Apply interventions to a saved baseline and compare the new equilibrium.
    Whatif {
        baseline: PathBuf,
        interventions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-emit reports (and observed-data tables) from a saved state.
    Report {
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load_scenario(path: &Path, overrides: &[String]) -> Result<Scenario, Failure> {
    if !path.is_file() {
        return Err(Failure::Invalid(format!("{}: no such scenario file", path.display())));
    }
    let mut scenario = Scenario::from_file(path)?;
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Invalid(format!("override `{kv}` is not KEY=VALUE")))?;
        scenario.set(k.trim(), v.trim())?;
    }
    Ok(scenario)
}

fn out_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

/// Output errors are runtime failures, whatever their kind.
fn emit(r: citymove_core::Result<()>) -> CmdResult {
    r.map_err(|e| Failure::Runtime(e.to_string()))
}

fn validate(path: &Path, overrides: &[String]) -> CmdResult {
    let scenario = load_scenario(path, overrides)?;
    let model = Model::load(&scenario)?;
    let geo = &model.geography;
    let residential = geo.buildings.iter().filter(|b| b.is_residential()).count();
    if model.total_capacity() < model.n_agents() as u64 {
        return Err(Failure::Invalid(format!(
            "insufficient housing: {} vacant dwellings for {} agents",
            model.total_capacity(),
            model.n_agents()
        )));
    }
    println!("OK");
    println!("block groups: {}", geo.block_groups.len());
    println!(
        "buildings: {} ({residential} residential, {} nonresidential)",
        geo.buildings.len(),
        geo.buildings.len() - residential
    );
    println!(
        "road network: {} nodes, {} edges",
        geo.network.nodes().len(),
        geo.network.edges().len()
    );
    println!("profiles: {}", model.profiles.len());
    println!("modes: {}", model.modes.len());
    println!("agents: {}", model.n_agents());
    println!("housing capacity: {}", model.total_capacity());
    Ok(())
}

fn run(path: &Path, out: &Path, overrides: &[String]) -> CmdResult {
    let scenario = load_scenario(path, overrides)?;
    let model = Model::load(&scenario)?;
    let state = run_to_convergence(&model)?;
    let summary = summarize(&model, &state);
    out_dir(out)?;
    emit(write_json(&out.join("summary.json"), &summary))?;
    emit(write_history(&out.join("history.csv"), &model, &state))?;
    emit(write_agents(&out.join("agents.csv"), &model, &state))?;
    emit(write_json(&out.join("state.json"), &SavedState::capture(&model, &state)))?;
    if state.converged {
        println!("converged after {} iterations (seed {})", state.iteration, scenario.seed);
    } else {
        eprintln!(
            "warning: not converged after {} iterations (seed {})",
            state.iteration, scenario.seed
        );
        println!("not converged after {} iterations (seed {})", state.iteration, scenario.seed);
    }
    Ok(())
}

fn calibrate_cmd(
    path: &Path,
    housing: &Path,
    modes: &Path,
    out: &Path,
    overrides: &[String],
) -> CmdResult {
    let scenario = load_scenario(path, overrides)?;
    let model = Model::load(&scenario)?;
    let observed = ObservedData::read(housing, modes)?;
    let config = scenario.calibration;
    let result = calibrate(&model, &observed, &config)?;
    let space = CriteriaSpace::for_model(&model);
    let fitted = space.decode(&result.best_vector, &model.profiles);
    let spread = seed_spread(&model, &observed, &result.best_vector, config.seed_checks)?;
    out_dir(out)?;
    let doc = serde_json::json!({
        "scenario": scenario.name,
        "seed": scenario.seed,
        "config": config,
        "best_vector": result.best_vector,
        "housing_error": result.housing_error,
        "mobility_error": result.mobility_error,
        "total": result.total,
        "evaluations": result.evaluations,
        "budget_exhausted": result.budget_exhausted,
        "climbs": result.climbs,
        "criteria": fitted,
        "seed_spread": spread,
    });
    emit(write_json(&out.join("calibration_result.json"), &doc))?;
    emit(write_trace(&out.join("trace.csv"), &result))?;
    emit(write_housing_criteria(&out.join("housing_criteria.csv"), &fitted))?;
    emit(write_mobility_criteria(&out.join("mobility_criteria.csv"), &fitted))?;
    if result.budget_exhausted {
        eprintln!("warning: evaluation budget exhausted; best-so-far written");
    }
    println!(
        "best total error {:.4} (housing {:.4}, mobility {:.4}) after {} evaluations",
        result.total, result.housing_error, result.mobility_error, result.evaluations
    );
    Ok(())
}

fn whatif(baseline: &Path, interventions: &Path, out: &Path) -> CmdResult {
    let saved: SavedState = read_json(baseline)?;
    let list = read_interventions(interventions)?;
    let (mut model, mut state) = saved.restore()?;
    let before = summarize(&model, &state);
    apply_interventions(&mut model, &mut state, &list)?;
    resume(&model, &mut state);
    let after = summarize(&model, &state);
    out_dir(out)?;
    emit(write_json(&out.join("comparison.json"), &compare(list, before, after)))?;
    emit(write_history(&out.join("history.csv"), &model, &state))?;
    emit(write_json(&out.join("state.json"), &SavedState::capture(&model, &state)))?;
    if !state.converged {
        eprintln!("warning: what-if run not converged after {} iterations", state.iteration);
    }
    println!("what-if equilibrium at iteration {}", state.iteration);
    Ok(())
}

fn report(state_path: &Path, out: &Path) -> CmdResult {
    let saved: SavedState = read_json(state_path)?;
    let (model, state) = saved.restore()?;
    let summary = summarize(&model, &state);
    out_dir(out)?;
    emit(write_json(&out.join("summary.json"), &summary))?;
    emit(write_history(&out.join("history.csv"), &model, &state))?;
    emit(write_agents(&out.join("agents.csv"), &model, &state))?;
    let observed = ObservedData::from_summary(&summary);
    emit(observed.write(&out.join("observed_housing.csv"), &out.join("observed_modes.csv")))?;
    println!("reports written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Validate { scenario, overrides } => validate(scenario, overrides),
        Command::Run {
            scenario,
            out,
            overrides,
        } => run(scenario, out, overrides),
        Command::Calibrate {
            scenario,
            observed_housing,
            observed_modes,
            out,
            overrides,
        } => calibrate_cmd(scenario, observed_housing, observed_modes, out, overrides),
        Command::Whatif {
            baseline,
            interventions,
            out,
        } => whatif(baseline, interventions, out),
        Command::Report { state, out } => report(state, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
