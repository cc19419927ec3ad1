use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use chroma_vae::datasets::Distribution;
use chroma_vae::experiment::{
    cmd_ablate, cmd_diagnose, cmd_eval, cmd_synth, cmd_train, AblationAxis, ExperimentConfig, RunOptions,
};
use chroma_vae::{Error, Result};

#[derive(Parser)]
#[command(name = "chroma", about = "Shortcut-isolating VAE experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    InDist,
    Ood,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    DimzZp,
    Beta,
}

#[derive(Subcommand)]
enum Verb {
    /// Synthesize dataset snapshots.
    Synth(Common),
    /// Train the configured method.
    Train(Common),
    /// Evaluate every trained head on the chosen splits.
    Eval {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "split", value_enum, default_values = ["in-dist", "ood"])]
        splits: Vec<SplitArg>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Latent-shift profile, subspace probes and reconstruction panels.
    Diagnose {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Sweep dim(z) × z_p or β.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AxisArg,
    },
}

fn prepare(c: &Common) -> Result<(ExperimentConfig, PathBuf, RunOptions)> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no run directory: pass --out or set output_dir".into()))?;
    Ok((cfg, out, RunOptions { overwrite: c.overwrite }))
}

fn done(verb: &str, dir: &Path) {
    println!("{verb}: {}", dir.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::Synth(c) => {
            let (cfg, out, opts) = prepare(&c)?;
            cmd_synth(&cfg, &out, opts)?;
            done("synth", &out);
        }
        Verb::Train(c) => {
            let (cfg, out, opts) = prepare(&c)?;
            cmd_train(&cfg, &out, opts)?;
            done("train", &out);
        }
        Verb::Eval { out, splits, overwrite } => {
            let splits: Vec<Distribution> = splits
                .into_iter()
                .map(|s| match s {
                    SplitArg::Train => Distribution::Train,
                    SplitArg::InDist => Distribution::InDist,
                    SplitArg::Ood => Distribution::Ood,
                })
                .collect();
            let result = cmd_eval(&out, &splits, RunOptions { overwrite })?;
            print!("{}", result.table.to_text());
        }
        Verb::Diagnose { out, overwrite } => {
            let d = cmd_diagnose(&out, RunOptions { overwrite })?;
            if let Some((z1, z2)) = d.shift_means {
                println!("latent shift: z1 {z1:.4}  z2 {z2:.4}");
            }
            println!("shortcut probe: mu1 {:.4}  mu2 {:.4}", d.probe.mu1, d.probe.mu2);
            for p in &d.panels {
                println!("panel {}", p.display());
            }
        }
        Verb::Ablate { common, axis } => {
            let (cfg, out, opts) = prepare(&common)?;
            let axis = match axis {
                AxisArg::DimzZp => AblationAxis::DimzZp,
                AxisArg::Beta => AblationAxis::Beta,
            };
            let rows = cmd_ablate(&cfg, axis, &out, opts)?;
            for r in rows {
                println!(
                    "{:<32} {:<16} {:<8} acc {:.4} worst {:.4}",
                    r.cell, r.method, r.distribution, r.accuracy, r.worst_group
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
