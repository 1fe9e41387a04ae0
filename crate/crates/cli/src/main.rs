//! Command-line front end: run scenarios, validate configurations, compare
//! pipeline variants, and sweep the streaming-vs-batch oracle.
//!
//! Exit codes: 0 success, 1 validation/configuration failure, 2 numerical
//! failure, 64 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use fieldmap_core::sparsify::BrSign;
use fieldmap_core::{
    aggregation_bounds, check_periodic_connectivity, graph_schedule, oracle_sweep, report, sim,
    Error, ScenarioConfig,
};

#[derive(Parser)]
#[command(
    name = "fieldmap",
    version,
    about = "Cooperative online scalar-field mapping simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write records, maps, and plot scripts.
    Run(ScenarioArgs),
    /// Check the scenario assumptions and print the aggregation bound
    /// constants without running the simulation.
    Validate(ScenarioArgs),
    /// Run all five pipeline variants and print an accuracy/time table.
    Compare(ScenarioArgs),
    /// Stream the scenario data and compare recursive against batch
    /// predictions at checkpoints.
    Oracle(ScenarioArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario description, TOML or JSON.
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the distributed-score sign: "paper" or "inverted".
    #[arg(long)]
    br_sign: Option<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig, Error> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.display().to_string();
        }
        if let Some(sign) = &self.br_sign {
            cfg.br_sign = match sign.as_str() {
                "paper" => BrSign::Paper,
                "inverted" => BrSign::Inverted,
                other => {
                    return Err(Error::Validation(format!(
                        "unknown br-sign '{other}' (expected 'paper' or 'inverted')"
                    )))
                }
            };
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(64);
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Validate(args) => validate(args),
        Command::Compare(args) => compare(args),
        Command::Oracle(args) => oracle(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_)
        | Error::DuplicateInput { .. }
        | Error::RemovalSingular { .. }
        | Error::Scoring(_) => 2,
        _ => 1,
    }
}

fn run(args: &ScenarioArgs) -> Result<ExitCode, Error> {
    let cfg = args.load()?;
    let field = cfg.field()?;
    let result = sim::run_scenario(&cfg)?;
    let out_dir = PathBuf::from(&cfg.out_dir);
    let written = report::write_run_outputs(&out_dir, &result, &field)?;

    let last_round = result.records.iter().map(|r| r.round).max().unwrap_or(0);
    let finals: Vec<_> = result
        .records
        .iter()
        .filter(|r| r.round == last_round)
        .collect();
    let mean_rmse =
        finals.iter().map(|r| r.rmse_distributed).sum::<f64>() / finals.len().max(1) as f64;
    println!("scenario: {}", args.config.display());
    println!("rounds: {}", last_round + 1);
    println!("final mean distributed RMSE: {mean_rmse:.6}");
    for w in &result.warnings {
        println!("warning: {w}");
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(args: &ScenarioArgs) -> Result<ExitCode, Error> {
    let cfg = args.load()?;
    let warnings = cfg.validate()?;
    let kernel = cfg.kernel()?;
    let params = cfg.consensus_params()?;
    let field = cfg.field()?;
    let grid = cfg.grid()?;
    let (y_bar, mu_bar) = cfg.observation_bounds(&field, &grid);
    let bounds = aggregation_bounds(&kernel, &params, y_bar, mu_bar)?;

    println!("config: {}", args.config.display());
    println!(
        "team: p = {}, B = {}, phi = {}, edge weight = {}",
        params.robot_count, params.connectivity_period, params.weight_floor, cfg.edge_weight
    );
    println!("observation bounds: y_bar = {y_bar}, mu_bar = {mu_bar}");
    println!("eta = {}", bounds.eta);
    println!("delta1_hat = {}", bounds.delta1_hat);
    println!("delta2_hat = {}", bounds.delta2_hat);
    println!("alpha = {}", bounds.alpha);
    println!("beta = {}", bounds.beta);
    println!("sigma_n_min = {}", bounds.sigma_n_min);
    println!("sigma_n^2 = {}", cfg.sigma_n_sq);
    let satisfied = cfg.sigma_n_sq >= bounds.sigma_n_min;
    println!(
        "sigma_n rule: {}",
        if satisfied {
            "satisfied"
        } else {
            "NOT satisfied"
        }
    );
    println!("assumption 2 (doubly stochastic weights): feasible");

    let graphs = graph_schedule(&cfg)?;
    let connected = check_periodic_connectivity(&graphs, params.connectivity_period);
    println!(
        "assumption 1 (periodic connectivity, B = {}): {}",
        params.connectivity_period,
        if connected {
            "satisfied"
        } else {
            "NOT satisfied"
        }
    );
    for w in &warnings {
        println!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn compare(args: &ScenarioArgs) -> Result<ExitCode, Error> {
    let cfg = args.load()?;
    let rows = sim::compare(&cfg)?;
    println!("scenario: {}", args.config.display());
    println!(
        "{:<26} {:>12} {:>12} {:>14} {:>14} {:>10}",
        "variant", "rmse_local", "rmse_dist", "pred_time[s]", "compress[s]", "wall[s]"
    );
    for row in rows {
        println!(
            "{:<26} {:>12.6} {:>12.6} {:>14.6e} {:>14.6e} {:>10.3}",
            row.variant,
            row.rmse_local,
            row.rmse_distributed,
            row.mean_pred_time,
            row.mean_compress_time,
            row.wall_time
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle(args: &ScenarioArgs) -> Result<ExitCode, Error> {
    let cfg = args.load()?;
    let rows = oracle_sweep(&cfg, 5)?;
    println!(
        "{:<9} {:>8} {:>14} {:>14}",
        "robot", "step", "max_mean_err", "max_var_err"
    );
    let mut worst = 0.0f64;
    for row in &rows {
        worst = worst.max(row.max_mean_err).max(row.max_var_err);
        println!(
            "{:<9} {:>8} {:>14.3e} {:>14.3e}",
            row.robot_id, row.step, row.max_mean_err, row.max_var_err
        );
    }
    println!("worst deviation: {worst:.3e}");
    if worst < 1e-8 {
        println!("equivalence: PASS (tolerance 1e-8)");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("equivalence: FAIL (tolerance 1e-8)");
        Ok(ExitCode::from(2))
    }
}
