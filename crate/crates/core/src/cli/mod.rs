//! Command-line front end: argument parsing, seed precedence, thread pool and exit codes.
//!
//! The master seed is taken from `--seed`, then the `ONESHOT_DAUG_SEED`
//! environment variable, then the config file. Exit code 0 means success,
//! 1 a failed audit or runtime error, 2 a configuration or usage error.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
pub use commands::{
    cmd_calibrate_world, cmd_dump_variants, cmd_eval, cmd_sweep, cmd_theory, ImageSource,
    TheoryWhich, SCHEMA,
};
pub use config::{RunConfig, SweepAxis, SweepSpec, SEED_ENV};

/// Success.
pub const EXIT_OK: i32 = 0;
/// A check failed or a run aborted.
pub const EXIT_FAILURE: i32 = 1;
/// The configuration or the arguments were rejected.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "oneshot-daug",
    version,
    about = "Single-image generative test-time augmentation on a synthetic world"
)]
pub struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the environment and the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the few-shot benchmark and write per-episode and summary CSVs.
    Eval {
        /// Also write the views of the first episode as PGM files.
        #[arg(long)]
        save_aug: bool,
    },
    /// Sweep one or more axes, each given as axis=v1,v2,...
    Sweep {
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
    },
    /// Run the theory audits: prop1, prop3, margin, bound-compare or all.
    Theory { which: String },
    /// Write an image and its generated variants as PGM files.
    DumpVariants {
        /// Source PGM; defaults to the template of --class.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        class: usize,
        /// Draw the source from the class distribution instead of the template.
        #[arg(long)]
        sample: bool,
    },
    /// Report world separation, a short benchmark and variant faithfulness.
    CalibrateWorld,
}

/// Resolves the configuration with flag and environment overrides.
pub fn resolve_config(cli: &Cli, env_seed: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = env_seed {
        cfg.seed = s.trim().parse().map_err(|_| {
            Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {s}"))
        })?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io { .. } | Error::Format { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn execute(cli: &Cli, cfg: &RunConfig) -> Result<bool> {
    let out = cfg.out.as_path();
    match &cli.command {
        Command::Eval { save_aug } => cmd_eval(cfg, out, *save_aug).map(|_| true),
        Command::Sweep { axes } => {
            let specs = axes
                .iter()
                .map(|a| SweepSpec::parse(a))
                .collect::<Result<Vec<_>>>()?;
            cmd_sweep(cfg, &specs, out).map(|_| true)
        }
        Command::Theory { which } => cmd_theory(cfg, TheoryWhich::parse(which)?, out),
        Command::DumpVariants {
            image,
            class,
            sample,
        } => {
            let source = match (image, sample) {
                (Some(p), _) => ImageSource::File(p.clone()),
                (None, true) => ImageSource::Sample(*class),
                (None, false) => ImageSource::Template(*class),
            };
            cmd_dump_variants(cfg, &source, out).map(|_| true)
        }
        Command::CalibrateWorld => cmd_calibrate_world(cfg, out).map(|_| true),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = match resolve_config(&cli, env_seed.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            Ok(pool) => pool.install(|| execute(&cli, &cfg)),
            Err(e) => Err(Error::Config(format!("cannot start {n} workers: {e}"))),
        },
        None => execute(&cli, &cfg),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
