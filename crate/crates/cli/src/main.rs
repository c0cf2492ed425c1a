//! `atl`: feature extraction, training, ensembles, transfer analyses and
//! reports over one output directory.
//!
//! Exit status: 0 on success, 1 on runtime failure, 2 on invalid
//! configuration or usage.

use std::path::PathBuf;
use std::process::ExitCode;

use atl_core::analysis::AblationKind;
use atl_core::datasets::DatasetKind;
use atl_core::models::{Architecture, InitMode};
use atl_core::training::Regime;
use clap::{Args, Parser, Subcommand};

use atl_cli::config::{self, ConfigError, Overrides, Resolved};
use atl_cli::commands;
use atl_cli::lock::OutputLock;

#[derive(Parser, Debug)]
#[command(name = "atl", version, about = "Audio transfer-learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Experiment config (TOML, or JSON by extension).
    #[arg(short, long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<DatasetKind>,
    /// Dataset root directory (default: $ATL_DATASET_ROOT).
    #[arg(long, value_name = "DIR")]
    dataset_root: Option<PathBuf>,
    /// Output directory holding the run registry.
    #[arg(short, long, value_name = "DIR")]
    output: Option<PathBuf>,
    #[arg(long)]
    architecture: Option<Architecture>,
    #[arg(long)]
    init: Option<InitMode>,
    /// Weight archive directory for pretrained init.
    #[arg(long, value_name = "DIR")]
    weights: Option<PathBuf>,
    #[arg(long)]
    regime: Option<Regime>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Held-out official fold.
    #[arg(long)]
    fold: Option<u32>,
    /// Run every loop on the calling thread.
    #[arg(long)]
    sequential: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Resolved, ConfigError> {
        self.resolve_with(None)
    }

    fn resolve_with(&self, members: Option<usize>) -> Result<Resolved, ConfigError> {
        let o = Overrides {
            dataset: self.dataset,
            dataset_root: self.dataset_root.clone(),
            output: self.output.clone(),
            architecture: self.architecture,
            init_mode: self.init,
            weights: self.weights.clone(),
            regime: self.regime,
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            seed: self.seed,
            fold: self.fold,
            members,
            sequential: self.sequential,
        };
        config::parse_and_validate(self.config.as_deref(), &o)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract features for every clip into the feature store.
    Prep(ConfigArgs),
    /// Train one model on the configured split.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        tag: Option<String>,
    },
    /// Train one model per fold (or the seeded split) and summarize.
    CrossValidate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        tag: Option<String>,
    },
    /// Train independently seeded members and evaluate their mean softmax.
    Ensemble {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        members: Option<usize>,
        /// Only the configured split instead of every fold.
        #[arg(long)]
        single_split: bool,
        #[arg(long)]
        tag: Option<String>,
    },
    /// Transfer-learning probes and attribution.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Accuracy tables and figures from the run registry.
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Destination (default: <output>/reports).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Write a weight archive from a safetensors file or a trained run.
    ImportWeights {
        #[arg(long, value_name = "FILE", conflicts_with = "from_run", required_unless_present = "from_run")]
        safetensors: Option<PathBuf>,
        #[arg(long, requires = "safetensors")]
        architecture: Option<Architecture>,
        /// Run id in the registry at --output.
        #[arg(long)]
        from_run: Option<String>,
        #[arg(short, long, value_name = "DIR", default_value = config::DEFAULT_OUTPUT)]
        output: PathBuf,
        /// Archive directory to create.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Provenance label stored in the archive.
        #[arg(long, default_value = "imagenet")]
        name: String,
    },
}

#[derive(Subcommand, Debug)]
enum Analyze {
    /// SVCCA between a model before and after fine-tuning.
    Svcca {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        after: String,
        /// Defaults to the after-run's own initialisation.
        #[arg(long)]
        before: Option<String>,
    },
    /// Pretrained weights up to each cut point, random after it.
    Fusion(ConfigArgs),
    /// Pretrained weights, frozen up to each cut point.
    Freeze(ConfigArgs),
    /// Pretrained weights with trailing blocks removed.
    Cutoff(ConfigArgs),
    /// Integrated-gradients attribution for one clip.
    Ig {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        run: String,
        #[arg(long)]
        clip: Option<String>,
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn locked<T>(r: &Resolved, f: impl FnOnce(&Resolved) -> anyhow::Result<T>) -> anyhow::Result<T> {
    let _lock = OutputLock::acquire(&r.output)?;
    r.echo_to(&r.output)?;
    f(r)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prep(cfg) => {
            let paths = locked(&cfg.resolve()?, commands::prep)?;
            print_paths(&paths);
        }
        Command::Train { cfg, tag } => {
            let r = cfg.resolve()?;
            let record = locked(&r, |r| commands::train(r, tag.as_deref()))?;
            eprintln!("{}: val accuracy {:.4}", record.run_id, record.final_accuracy());
            println!("{}", atl_core::training::RunRegistry::new(&r.output).run_dir(&record.run_id).display());
        }
        Command::CrossValidate { cfg, tag } => {
            let (cv, summary) = locked(&cfg.resolve()?, |r| commands::cross_validation(r, tag.as_deref()))?;
            eprintln!(
                "cross-validation: mean {:.4} ± {:.4} over {} folds",
                cv.mean_accuracy,
                cv.std_accuracy,
                cv.fold_accuracies.len()
            );
            println!("{}", summary.display());
            if !cv.complete {
                anyhow::bail!("{} fold(s) failed: {:?}", cv.failures.len(), cv.failures);
            }
        }
        Command::Ensemble { cfg, members, single_split, tag } => {
            let mut r = cfg.resolve_with(members)?;
            if single_split {
                r.file.ensemble.all_folds = Some(false);
                r.ensemble_all_folds = false;
            }
            let runs = locked(&r, |r| commands::ensemble(r, tag.as_deref()))?;
            for e in &runs {
                let acc = e.accuracy().map(|a| format!("{a:.4}")).unwrap_or_else(|| "unavailable".into());
                eprintln!("{}: ensemble accuracy {acc}", e.id);
                println!("{}", r.output.join("ensembles").join(format!("{}.json", e.id)).display());
            }
        }
        Command::Analyze(a) => match a {
            Analyze::Svcca { cfg, after, before } => {
                let paths = locked(&cfg.resolve()?, |r| commands::svcca(r, &after, before.as_deref()))?;
                print_paths(&paths);
            }
            Analyze::Fusion(cfg) => ablation(cfg, AblationKind::Fusion)?,
            Analyze::Freeze(cfg) => ablation(cfg, AblationKind::Freeze)?,
            Analyze::Cutoff(cfg) => ablation(cfg, AblationKind::Cutoff)?,
            Analyze::Ig { cfg, run, clip, target, steps } => {
                let paths = locked(&cfg.resolve()?, |r| commands::ig(r, &run, clip.as_deref(), target, steps))?;
                print_paths(&paths);
            }
        },
        Command::Report { cfg, out } => {
            let output = match (&cfg.config, &cfg.dataset) {
                (None, None) => cfg.output.clone().unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUTPUT)),
                _ => cfg.resolve()?.output,
            };
            let out = out.unwrap_or_else(|| output.join("reports"));
            let paths = commands::report(&output, &out)?;
            print_paths(&paths);
        }
        Command::ImportWeights { safetensors, architecture, from_run, output, out, name } => {
            let source = match (&safetensors, &from_run) {
                (Some(path), _) => commands::WeightSource::Safetensors {
                    path,
                    architecture: architecture
                        .ok_or_else(|| ConfigError("--architecture is required with --safetensors".into()))?,
                },
                (None, Some(run_id)) => commands::WeightSource::Run { registry: &output, run_id },
                (None, None) => return Err(ConfigError("give --safetensors or --from-run".into()).into()),
            };
            let path = commands::import_weights(source, &name, &out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn ablation(cfg: ConfigArgs, kind: AblationKind) -> anyhow::Result<()> {
    let (partial, paths) = locked(&cfg.resolve()?, |r| commands::ablation(r, kind))?;
    print_paths(&paths);
    if partial {
        anyhow::bail!("{kind} curve is partial: at least one point failed (see {})", paths[0].display());
    }
    Ok(())
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<ConfigError>().is_some()
            || matches!(c.downcast_ref::<atl_core::Error>(), Some(atl_core::Error::Config(_)))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
