use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deskdiff::csvio;
use deskdiff::experiment::{self, AblationAxis};
use deskdiff::{LabError, Result, RunConfig};
use deskdiff_core::{Embedder, EmbedderKind, EmbedderSpec, MetricsReport, MetricsSpec};

#[derive(Parser)]
#[command(name = "deskdiff", version, about = "Reference-repelling guidance for diffusion sampling on Gaussian mixtures")]
struct Cli {
    /// Override the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run baseline and guided sampling and write samples, refs and metrics.
    Sample { config: PathBuf },
    /// Sweep one setting and write ablation.csv.
    Ablate {
        config: PathBuf,
        /// n_step, sampler or gamma.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long)]
        values: Option<String>,
    },
    /// Print the baseline-vs-guided table of a run directory.
    Report { dir: PathBuf },
    /// Compute the metric battery for two point CSVs (identity embedding).
    Metrics {
        generated: PathBuf,
        real: PathBuf,
        /// Nearest-neighbour k.
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sample { config } => {
            let cfg = load(cli, config)?;
            let out = experiment::run_experiment(&cfg, &cfg.output_dir)?;
            if !cli.quiet {
                eprintln!(
                    "wrote {} guided and {} baseline samples to {}",
                    out.guided_samples.len(),
                    out.baseline_samples.len(),
                    cfg.output_dir.display()
                );
                print!("{}", experiment::emit_report(&cfg.output_dir)?);
            }
        }
        Command::Ablate { config, axis, values } => {
            let cfg = load(cli, config)?;
            let axis = AblationAxis::parse(axis, values.as_deref(), &cfg)?;
            experiment::run_ablation(&cfg, &axis, &cfg.output_dir)?;
            if !cli.quiet {
                eprintln!("wrote {}", cfg.output_dir.join("ablation.csv").display());
            }
        }
        Command::Report { dir } => print!("{}", experiment::emit_report(dir)?),
        Command::Metrics { generated, real, k } => {
            let (gen, _) = csvio::read_points(generated)?;
            let (real_pts, _) = csvio::read_points(real)?;
            let dim = gen.first().or(real_pts.first()).map_or(0, Vec::len);
            let embedder = Embedder::new(EmbedderSpec {
                kind: EmbedderKind::Identity,
                seed: 0,
                in_dim: dim,
                out_dim: dim,
                bandwidth: 1.0,
            })
            .map_err(|e| LabError::config("generated", e.to_string()))?;
            let ge = embedder.embed_all(&gen).map_err(|e| LabError::config("generated", e.to_string()))?;
            let re = embedder.embed_all(&real_pts).map_err(|e| LabError::config("real", e.to_string()))?;
            let spec = MetricsSpec { k: *k, ..MetricsSpec::default() };
            let report = MetricsReport::evaluate(&ge, &re, &re, &spec);
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
