//! `cropnet`: synthetic data, features, training, transfer experiments and
//! Grad-CAM maps from one TOML run configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "cropnet",
    version,
    about = "Cross-region crop type classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Comma-separated seeds, e.g. 1,2,3.
    #[arg(long, global = true, value_delimiter = ',', value_name = "SEEDS")]
    seed_list: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seeds trained concurrently. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Count rejected evaluation samples as errors.
    #[arg(long, global = true)]
    strict: bool,
    /// Feature kind: median1d, median2d, harmonic or hyper.
    #[arg(long, global = true)]
    feature: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Source dataset (JSON lines), replacing any configured source.
    #[arg(long, global = true, value_name = "PATH")]
    source: Option<PathBuf>,
    /// Target dataset (JSON lines), replacing any configured target.
    #[arg(long, global = true, value_name = "PATH")]
    target: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Any configuration key, e.g. `experiment.train.lr=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the configured synthetic source and target regions.
    Synth,
    /// Compute features of the source dataset.
    Featurize,
    /// Train one model per seed on the whole source and save checkpoints.
    Train,
    /// In-region split protocol, or score `--checkpoint` on the target.
    Eval,
    /// Train on source, test on target, once per seed.
    Transfer,
    /// Transfer runs over the window-length and span grid.
    Sensitivity,
    /// Augmentation ladder: none, +shift, +scale, +warp.
    Ablate,
    /// Per-class Grad-CAM importance maps.
    Cam,
    /// Print the trainable parameter count of the configured network.
    Params,
    /// Check a JSON-lines dataset and summarize it.
    Validate {
        /// Dataset file; defaults to the configured source.
        path: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Runtime { kind: &'static str, message: String },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime { .. } => 1,
        }
    }

    fn to_json(&self) -> String {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.as_str()),
            CliError::Config(m) => ("config", m.as_str()),
            CliError::Runtime { kind, message } => (*kind, message.as_str()),
        };
        serde_json::json!({ "error": kind, "message": message, "exit_code": self.exit_code() })
            .to_string()
    }
}

impl From<cropnet_core::Error> for CliError {
    fn from(e: cropnet_core::Error) -> Self {
        match e {
            cropnet_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime {
                kind: other.kind(),
                message: other.to_string(),
            },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime {
            kind: "json",
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime {
            kind: "io",
            message: e.to_string(),
        }
    }
}

/// Folds the flag overrides into the `--set` list, after the user's own.
fn overrides(c: &Common) -> Vec<String> {
    let mut out = c.set.clone();
    let quote = |p: &PathBuf| toml::Value::String(p.display().to_string()).to_string();
    if let Some(s) = &c.seed_list {
        out.push(format!("seeds={s:?}"));
    }
    if let Some(o) = &c.out {
        out.push(format!("out={}", quote(o)));
    }
    if let Some(t) = c.threads {
        out.push(format!("threads={t}"));
    }
    if c.strict {
        out.push("experiment.strict=true".into());
    }
    if let Some(f) = &c.feature {
        out.push(format!(
            "experiment.feature={}",
            toml::Value::String(f.clone())
        ));
    }
    if let Some(e) = c.epochs {
        out.push(format!("experiment.train.epochs={e}"));
    }
    if let Some(p) = &c.checkpoint {
        out.push(format!("checkpoint={}", quote(p)));
    }
    out
}

fn resolve(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::resolve(c.config.as_deref(), &overrides(c))?;
    let file = |p: &PathBuf| config::DataSource {
        path: Some(p.clone()),
        synth: None,
    };
    if let Some(p) = &c.source {
        cfg.source = Some(file(p));
    }
    if let Some(p) = &c.target {
        cfg.target = Some(file(p));
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli.common)?;
    cropnet_core::eval::set_seed_threads(cfg.threads);
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Featurize => commands::featurize(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Transfer => commands::transfer(&cfg),
        Command::Sensitivity => commands::sensitivity(&cfg),
        Command::Ablate => commands::ablate(&cfg),
        Command::Cam => commands::cam(&cfg),
        Command::Params => commands::params(&cfg),
        Command::Validate { path } => commands::validate(&cfg, path.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
        Err(e) => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
