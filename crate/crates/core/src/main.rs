use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use aoi_sched::experiment::run::{cmd_optimize, cmd_run};
use aoi_sched::experiment::validate::{format_table, run_checks, ValidateOptions};
use aoi_sched::experiment::ExperimentSpec;
use aoi_sched::model::DEFAULT_HORIZON;

#[derive(Parser)]
#[command(name = "aoi-sched", version, about = "Cost-aware AoI scheduling experiments")]
struct Cli {
    /// Worker threads for sweeps and replicas (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate or evaluate every policy at every sweep value.
    Run(ScenarioArgs),
    /// Optimize the randomized policies and confirm them by simulation.
    Optimize(ScenarioArgs),
    /// Run the analytic-vs-simulation checks.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: fig5a, fig5b, fig6, fig7, fig8, fig9.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, env = "AOI_SCHED_OUT", default_value = "results")]
    out: PathBuf,
    /// Replicas per simulated point, overriding the scenario.
    #[arg(long)]
    seeds: Option<usize>,
    /// Slots per replica, overriding the scenario.
    #[arg(long)]
    horizon: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Comma-separated tags (forp, ofrp, dpp, solver) or check names.
    #[arg(long)]
    only: Option<String>,
    #[arg(long, default_value_t = 4)]
    seeds: usize,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: u64,
    /// Multiplier applied to every tolerance.
    #[arg(long, default_value_t = 1.0)]
    tol_scale: f64,
}

fn load(args: &ScenarioArgs) -> Result<ExperimentSpec> {
    let spec = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentSpec::from_toml(&text).with_context(|| format!("invalid scenario {}", path.display()))?
        }
        (None, Some(name)) => ExperimentSpec::from_preset(name)?,
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    Ok(spec.with_overrides(args.seeds, args.horizon)?)
}

fn execute(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Run(args) => {
            let spec = load(&args)?;
            let report = cmd_run(&spec, &args.out)?;
            println!(
                "{}: {} rows ({} not ok) -> {}",
                spec.scenario,
                report.rows,
                report.failed_rows,
                report.sweep_csv.display()
            );
            println!("{} histogram files", report.histograms.len());
        }
        Command::Optimize(args) => {
            let spec = load(&args)?;
            let report = cmd_optimize(&spec, &args.out)?;
            for r in &report.rows {
                let value = r.axis_value.map(|v| format!("{}={v} ", spec.axis_label())).unwrap_or_default();
                let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{value}{} user {}: {} analytic aoi {} cost {} | simulated aoi {} cost {}",
                    r.policy,
                    r.user,
                    r.status,
                    fmt(r.analytic_avg_aoi),
                    fmt(r.analytic_avg_cost),
                    fmt(r.sim_avg_aoi),
                    fmt(r.sim_avg_cost)
                );
            }
            println!("-> {}", report.csv.display());
        }
        Command::Validate(args) => {
            let opts = ValidateOptions {
                tol_scale: args.tol_scale,
                seeds: args.seeds,
                horizon: args.horizon,
            };
            let results = run_checks(&opts, args.only.as_deref());
            if results.is_empty() {
                anyhow::bail!("--only {:?} matches no check", args.only.unwrap_or_default());
            }
            print!("{}", format_table(&results));
            if results.iter().any(|r| !r.pass) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
