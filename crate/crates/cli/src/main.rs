use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dama::harness::{self, output, run, verify};
use dama::schedules::{ScheduleKnobs, ScheduleMode};

#[derive(Parser)]
#[command(name = "dama", version, about = "Decentralized stochastic minimax simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a configuration and write CSV/JSON outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the mixing matrix to `mixing.csv`.
        #[arg(long)]
        dump_mixing: bool,
    },
    /// Run a configuration once per value of a dotted key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,...`, e.g. `topology.K=4,8,16`.
        #[arg(long)]
        vary: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant suite; exits nonzero on any failure.
    Verify,
    /// Print a preset schedule and its condition report as JSON.
    Schedule {
        #[arg(long)]
        mode: ScheduleMode,
        #[arg(long = "T")]
        t: usize,
        #[arg(long = "K")]
        k: usize,
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        c_mu: f64,
        #[arg(long, default_value_t = 1.0)]
        c_beta: f64,
        #[arg(long, default_value_t = 1.0)]
        c_p: f64,
        #[arg(long, default_value_t = 1.0)]
        c_b: f64,
    },
}

fn print_summary(summary: &run::RunSummary) {
    let a = &summary.averaged_metric;
    let f = &summary.final_metric;
    println!(
        "averaged stationarity {:.6e} ± {:.2e}, final {:.6e} ± {:.2e}, invariants {}",
        a.mean,
        a.std,
        f.mean,
        f.std,
        if summary.invariants.pass { "ok" } else { "FAILED" }
    );
}

fn cmd_run(config: PathBuf, out: Option<PathBuf>, dump_mixing: bool) -> Result<()> {
    let cfg = harness::load_config(&config)?;
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .context("no output directory: pass --out or set output_dir")?;
    let setup = harness::Setup::new(cfg)?;
    let result = run::run_setup(&setup)?;
    let files = harness::write_run(&setup, &result, &dir)?;
    if dump_mixing {
        output::dump_mixing(&setup, &dir)?;
    }
    print_summary(&result.summary);
    log::info!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn cmd_sweep(config: PathBuf, vary: &str, out: Option<PathBuf>) -> Result<()> {
    let (key, values) = vary.split_once('=').context("--vary expects key=v1,v2,...")?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if key.is_empty() || values.iter().any(String::is_empty) {
        bail!("--vary expects key=v1,v2,...");
    }
    for p in harness::sweep(&config, key, &values, out.as_deref())? {
        print!("{key}={}: ", p.value);
        print_summary(&p.summary);
    }
    Ok(())
}

fn cmd_verify() -> bool {
    let results = verify::run_invariant_suite();
    for c in &results {
        println!("{} {:<40} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = results.iter().filter(|c| !c.pass).count();
    println!("{} checks, {failed} failed", results.len());
    failed == 0
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run {
            config,
            out,
            dump_mixing,
        } => cmd_run(config, out, dump_mixing),
        Command::Sweep { config, vary, out } => cmd_sweep(config, &vary, out),
        Command::Verify => {
            return if cmd_verify() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Schedule {
            mode,
            t,
            k,
            n,
            kappa,
            lambda,
            c_mu,
            c_beta,
            c_p,
            c_b,
        } => {
            let knobs = ScheduleKnobs { c_mu, c_beta, c_p, c_b };
            harness::schedule_report(mode, knobs, t, k, n, kappa, lambda)
                .map_err(anyhow::Error::from)
                .and_then(|r| Ok(println!("{}", serde_json::to_string_pretty(&r)?)))
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
