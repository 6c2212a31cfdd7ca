//! `purity`: regenerate filtered photon-statistics data sets from a TOML
//! run configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{Ctx, Outcome};
use config::RunConfig;

const OUT_ENV: &str = "PURITY_OUT";

#[derive(Parser, Debug)]
#[command(name = "purity", version, about = "Frequency-filtered photon statistics of pulsed quantum emitters")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory. Falls back to `output` in the config, then $PURITY_OUT, then `purity-out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Sensor coupling ε.
    #[arg(long, global = true, value_name = "X")]
    epsilon: Option<f64>,

    /// Repeat every filtered point at ε/2 and exit with status 2 if any
    /// point moves by more than the tolerance.
    #[arg(long, global = true)]
    check_convergence: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Two-time coincidence map of a pulsed two-level emitter.
    G2map,
    /// Filtered emission spectra for a set of pulse lengths.
    Spectrum,
    /// g²(0) versus pulse length for a set of filter widths.
    SweepPulse,
    /// g²(0) versus filter width for a set of pulse lengths.
    SweepFilter,
    /// g²(0) of the exciton line of the biexciton cascade versus filter width.
    SweepFourlevel,
    /// Simulated HBT experiment: click streams, histogram and estimator.
    HbtSim,
    /// Peak-sum estimator and side-peak diagnostics of a histogram CSV.
    AnalyzeHistogram { input: PathBuf },
    /// Cascade lifetime fit of a decay-curve CSV.
    FitLifetime { input: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::G2map => "g2map",
            Command::Spectrum => "spectrum",
            Command::SweepPulse => "sweep-pulse",
            Command::SweepFilter => "sweep-filter",
            Command::SweepFourlevel => "sweep-fourlevel",
            Command::HbtSim => "hbt-sim",
            Command::AnalyzeHistogram { .. } => "analyze-histogram",
            Command::FitLifetime { .. } => "fit-lifetime",
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(eps) = cli.epsilon {
        cfg.sensor.coupling = Some(eps);
        cfg.validate().map_err(|(key, msg)| anyhow::anyhow!("--epsilon: `{key}`: {msg}"))?;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("purity-out"));
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let ctx = Ctx { out, seed: cli.seed.or(cfg.seed).unwrap_or(0), check_convergence: cli.check_convergence };

    let outcome: Outcome = match &cli.command {
        Command::G2map => commands::g2map(&cfg, &ctx),
        Command::Spectrum => commands::spectrum(&cfg, &ctx),
        Command::SweepPulse => commands::sweep_pulse(&cfg, &ctx),
        Command::SweepFilter => commands::sweep_filter(&cfg, &ctx),
        Command::SweepFourlevel => commands::sweep_fourlevel(&cfg, &ctx),
        Command::HbtSim => commands::hbt_sim(&cfg, &ctx),
        Command::AnalyzeHistogram { input } => commands::analyze_histogram(&cfg, &ctx, input),
        Command::FitLifetime { input } => commands::fit_lifetime(&cfg, &ctx, input),
    }?;

    let name = cli.command.name();
    let meta_name = format!("{name}_metadata.json");
    let mut outputs = outcome.outputs.clone();
    outputs.push(meta_name.clone());
    let metadata = json!({
        "tool": "purity",
        "version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "seed": ctx.seed,
        "check_convergence": ctx.check_convergence,
        "config": cfg,
        "resolved": outcome.resolved,
        "converged": outcome.converged,
        "summary": outcome.summary,
        "outputs": outputs,
    });
    let path = ctx.out.join(&meta_name);
    let mut text = serde_json::to_string_pretty(&metadata)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(outcome.converged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: not every point converged; see the metadata file");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
