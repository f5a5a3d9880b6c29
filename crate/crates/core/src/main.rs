use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scsampler::cli::{
    cmd_evaluate, cmd_generate, cmd_sweep, cmd_train, cmd_validate, config_manifests, exit_code, format_reports,
    ExperimentConfig, Overrides, TrainTarget,
};
use scsampler::Error;

#[derive(Parser)]
#[command(name = "scsampler", version, about = "Salient clip sampling for budget-aware video classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Classifier,
    Sampler,
    Joint,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset to `data.dir`.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the classifier, the per-modality samplers or the joint sampler.
    Train {
        target: Target,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate every configured strategy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(short = 'k', long = "k")]
        k: Option<usize>,
        #[arg(short = 'n', long = "n")]
        n: Option<usize>,
    },
    /// Evaluate every configured strategy over the `[sweep]` values.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(short = 'k', long = "k")]
        k: Option<usize>,
        #[arg(short = 'n', long = "n")]
        n: Option<usize>,
    },
    /// Check manifests and the files they reference.
    Validate {
        /// Manifests to check; defaults to `data.train` and `data.test`.
        manifests: Vec<PathBuf>,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
}

fn load(common: &Common, extra: Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        workers: common.workers,
        output_dir: common.output_dir.clone(),
        ..extra
    });
    Ok(cfg)
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { common } => {
            emit(&cmd_generate(&load(&common, Overrides::default())?)?);
        }
        Command::Train { target, common, epochs } => {
            let cfg = load(&common, Overrides { epochs, ..Default::default() })?;
            let target = match target {
                Target::Classifier => TrainTarget::Classifier,
                Target::Sampler => TrainTarget::Sampler,
                Target::Joint => TrainTarget::Joint,
            };
            for p in cmd_train(&cfg, target)? {
                emit(&format!("wrote {}\n", p.display()));
            }
        }
        Command::Evaluate { common, k, n } => {
            let cfg = load(&common, Overrides { k, n, ..Default::default() })?;
            emit(&format_reports(&cmd_evaluate(&cfg)?));
        }
        Command::Sweep { common, k, n } => {
            let cfg = load(&common, Overrides { k, n, ..Default::default() })?;
            emit(&format_reports(&cmd_sweep(&cfg)?));
        }
        Command::Validate { manifests, config } => {
            let manifests = match (manifests.is_empty(), config) {
                (false, _) => manifests,
                (true, Some(c)) => config_manifests(&ExperimentConfig::load(&c)?),
                (true, None) => Vec::new(),
            };
            let findings = cmd_validate(&manifests)?;
            for (path, violations) in &findings {
                for v in violations {
                    emit(&format!("{}: {v}\n", path.display()));
                }
            }
            if !findings.is_empty() {
                return Err(Error::Invalid { count: findings.len() });
            }
            emit(&format!("ok: {} manifest(s)\n", manifests.len()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
