use clap::{Args, Parser, Subcommand};
use coher_pvad::commands::{eval, features, infer, roc, simulate, train};
use coher_pvad::{parse_config, ConfigOverrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "coher-pvad",
    version,
    about = "Personal voice activity detection on ad-hoc microphone arrays",
    long_about = "Pipeline: simulate -> features -> train -> eval / infer / roc.\n\
                  Settings merge as defaults <- --config JSON <- flags; every\n\
                  artifact directory gets a manifest with the seed and config\n\
                  that produced it. COHER_PVAD_THREADS caps worker threads."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Settings shared by commands that take a run configuration.
#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for all randomness of this command
    #[arg(long)]
    seed: Option<u64>,
    /// Geometry preset name or geometry JSON path
    #[arg(long)]
    geometry: Option<String>,
    /// Keep only the first N microphones of the geometry
    #[arg(long)]
    mics: Option<usize>,
    /// Single SIR value in dB, replacing the configured grid
    #[arg(long, allow_negative_numbers = true)]
    sir: Option<f64>,
    /// Number of scenes to simulate
    #[arg(long)]
    scenes: Option<usize>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Label threshold below peak frame energy, in dB
    #[arg(long)]
    threshold_db: Option<f64>,
    /// Probability of hiding the spatial stream during training
    #[arg(long)]
    p_enrollless: Option<f64>,
    /// Reverberation time in seconds
    #[arg(long)]
    t60: Option<f64>,
    /// Scene duration in seconds
    #[arg(long)]
    duration: Option<f64>,
}

impl ConfigArgs {
    fn overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            seed: self.seed,
            geometry: self.geometry.clone(),
            mics: self.mics,
            sir: self.sir,
            scenes: self.scenes,
            epochs: self.epochs,
            threshold_db: self.threshold_db,
            p_enrollless: self.p_enrollless,
            t60: self.t60,
            duration: self.duration,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a seeded synthetic dataset: scenes, labels, enrollment audio
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute network inputs and speaker embeddings for a dataset
    Features {
        /// Dataset directory produced by `simulate`
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train the classifier on a prepared dataset
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory with features extracted
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for checkpoint, log, and manifest
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint per SIR condition and write a metrics report
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint file from `train`
        #[arg(long)]
        ckpt: PathBuf,
        /// Report JSON output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-frame speech probabilities for one WAV and one embedding
    Infer {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// DVEC embedding of the target speaker
        #[arg(long)]
        embedding: PathBuf,
        /// Probability CSV output path
        #[arg(long)]
        out: PathBuf,
        /// Ignore the spatial stream (single-channel operating point)
        #[arg(long)]
        enrollless: bool,
    },
    /// Export the pooled ROC curve of a checkpoint over a dataset
    Roc {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// ROC CSV output path
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cmd: Cmd) -> coher_pvad::Result<()> {
    match cmd {
        Cmd::Simulate { cfg, out } => {
            let config = parse_config(cfg.config.as_deref(), &cfg.overrides())?;
            let manifest = simulate::run(&config, &out)?;
            println!(
                "wrote {} scenes ({}, {} mics, seed {}) and {} enrollments to {}",
                manifest.scenes.len(),
                manifest.geometry_name,
                manifest.num_mics,
                manifest.config.seed,
                manifest.enrollments.len(),
                out.display()
            );
        }
        Cmd::Features { dataset } => {
            let fm = features::run(&dataset)?;
            println!(
                "wrote {} feature files and {} embeddings under {}",
                fm.features.len(),
                fm.embeddings.len(),
                dataset.display()
            );
        }
        Cmd::Train { cfg, dataset, out } => {
            let config = parse_config(cfg.config.as_deref(), &cfg.overrides())?;
            let tm = train::run(&config, &dataset, &out)?;
            println!(
                "trained on {} scenes ({} validation): best epoch {} val_loss {:.6}; checkpoint {}",
                tm.train_scenes,
                tm.val_scenes,
                tm.best_epoch,
                tm.best_val_loss,
                out.join(&tm.checkpoint).display()
            );
        }
        Cmd::Eval { dataset, ckpt, out } => {
            let report = eval::run(&dataset, &ckpt, Some(&out))?;
            for c in &report.conditions {
                println!(
                    "sir {:>6.1} dB  geometry {:<12} mics {}  auc {:.4}  eer {:.4}  ({} frames)",
                    c.sir_db, c.geometry, c.mics, c.auc, c.eer, c.frames
                );
            }
            println!("report written to {}", out.display());
        }
        Cmd::Infer { wav, ckpt, embedding, out, enrollless } => {
            let probs = infer::run(&wav, &ckpt, &embedding, Some(&out), &infer::InferOptions { enrollless })?;
            let mean = probs.iter().sum::<f64>() / probs.len().max(1) as f64;
            println!("wrote {} frame probabilities (mean {:.4}) to {}", probs.len(), mean, out.display());
        }
        Cmd::Roc { dataset, ckpt, out } => {
            let curve = roc::run(&dataset, &ckpt, &out)?;
            println!("auc {:.4} eer {:.4}; curve written to {}", curve.auc(), curve.eer(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
