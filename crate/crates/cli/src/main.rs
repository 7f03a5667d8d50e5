//! `modwatch` command-line front end.
//!
//! Exit codes: 0 ok, 2 configuration, 3 numeric failure, 4 data or file,
//! 5 shape.

mod commands;
mod config;
mod output;
mod reference;
mod reproduce;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modwatch::model::ModelMode;
use modwatch::{Error, Result};

use commands::{parse_model_arg, parse_module, EvalSplit};
use config::{parse_surface, RunConfig};
use output::OutDir;
use reproduce::{Experiment, Scale};

#[derive(Parser)]
#[command(name = "modwatch", version, about = "Anomaly detection for multi-module pulsed waveforms")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets every seed in the run. Falls back to MODWATCH_SEED.
    #[arg(long, global = true, env = "MODWATCH_SEED")]
    seed: Option<u64>,
    /// Overrides one config key, e.g. `--set train.max_epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic waveform dataset.
    Generate {
        #[arg(long)]
        modules: Option<usize>,
        #[arg(long)]
        samples_per_module: Option<usize>,
        #[arg(long)]
        faults: Option<usize>,
        #[arg(long)]
        time_steps: Option<usize>,
        /// Also write the fault-free counterpart of every sample.
        #[arg(long)]
        with_reference: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a conditional model or per-module models.
    Train {
        /// Dataset file or directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
        /// `cvae` or `vae`.
        #[arg(long)]
        mode: Option<String>,
        /// Module id or `all` (per-module mode only).
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dataset and write ROC/AUC, threshold and distribution reports.
    Eval {
        /// Checkpoint path, `identity`, or `reference=PATH`. Repeatable.
        #[arg(long = "model", required = true)]
        models: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fpr_budget: Option<f64>,
        /// `test` or `all`.
        #[arg(long, default_value = "test")]
        split: String,
        /// Latent draws per sample; 0 scores at the posterior mean.
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter-normalised 2-D loss surface around a checkpoint.
    Landscape {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        res: Option<usize>,
        #[arg(long)]
        range: Option<f64>,
        /// `train` or `validation`.
        #[arg(long)]
        surface: Option<String>,
        #[arg(long)]
        direction_seed: Option<u64>,
        /// Retrain at each depth and report every surface.
        #[arg(long)]
        depth_sweep: bool,
        /// Comma-separated conv block counts for the sweep.
        #[arg(long)]
        depths: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Latent-sampling uncertainty bands and miscalibration areas.
    Uq {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        examples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a complete experiment and write one directory per figure.
    Reproduce {
        /// `figs`, `appendixA` or `appendixB`.
        #[arg(long, alias = "paper-experiment")]
        experiment: String,
        /// `desk` or `paper`.
        #[arg(long, default_value = "desk")]
        scale: String,
        /// Allow full-scale runs.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite(_) | Error::Diverged { .. } => 3,
        Error::Data(_) | Error::Format(_) | Error::Io(_) => 4,
        Error::Shape(_) => 5,
        Error::TapeConsumed => 1,
    }
}

fn resolve(global: &Global) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.set_seed(seed);
    }
    for o in &global.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{o}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if global.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    cfg.grid.workers = global.jobs;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.global)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    match cli.command {
        Command::Generate {
            modules,
            samples_per_module,
            faults,
            time_steps,
            with_reference,
            out,
        } => {
            let g = &mut cfg.generator;
            g.module_count = modules.unwrap_or(g.module_count);
            g.samples_per_module = samples_per_module.unwrap_or(g.samples_per_module);
            g.fault_count = faults.unwrap_or(g.fault_count);
            g.time_steps = time_steps.unwrap_or(g.time_steps);
            cfg.validate()?;
            commands::cmd_generate(&cfg, &mut OutDir::create(&out)?, with_reference)
        }
        Command::Train {
            data,
            mode,
            module,
            epochs,
            out,
        } => {
            if let Some(m) = mode {
                cfg.model.mode = ModelMode::parse(&m)?;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            let module = parse_module(&module)?;
            cfg.validate()?;
            commands::cmd_train(&cfg, &data, module, &mut OutDir::create(&out)?)
        }
        Command::Eval {
            models,
            data,
            fpr_budget,
            split,
            draws,
            out,
        } => {
            if let Some(b) = fpr_budget {
                cfg.fpr_budget = b;
            }
            if let Some(d) = draws {
                cfg.eval_draws = d;
            }
            let split = match split.as_str() {
                "test" => EvalSplit::Test,
                "all" => EvalSplit::All,
                other => return Err(Error::Config(format!("--split expects test or all, got '{other}'"))),
            };
            cfg.validate()?;
            let models: Vec<_> = models.iter().map(|m| parse_model_arg(m)).collect();
            commands::cmd_eval(&cfg, &models, &data, split, &mut OutDir::create(&out)?)
        }
        Command::Landscape {
            model,
            data,
            res,
            range,
            surface,
            direction_seed,
            depth_sweep,
            depths,
            out,
        } => {
            if let Some(r) = res {
                cfg.grid.resolution = r;
            }
            if let Some(r) = range {
                cfg.grid.range = r;
            }
            if let Some(s) = surface {
                cfg.surface = parse_surface(&s)?;
            }
            if let Some(s) = direction_seed {
                cfg.direction_seed = s;
            }
            if let Some(d) = depths {
                cfg.set("landscape.depths", &d)?;
            }
            cfg.validate()?;
            commands::cmd_landscape(&cfg, &model, &data, depth_sweep, &mut OutDir::create(&out)?)
        }
        Command::Uq {
            model,
            data,
            draws,
            examples,
            out,
        } => {
            if let Some(d) = draws {
                cfg.uq_draws = d;
            }
            if let Some(e) = examples {
                cfg.uq_examples = e;
            }
            cfg.validate()?;
            commands::cmd_uq(&cfg, &model, &data, &mut OutDir::create(&out)?)
        }
        Command::Reproduce {
            experiment,
            scale,
            force,
            out,
        } => {
            let experiment = Experiment::parse(&experiment)?;
            let scale = Scale::parse(&scale)?;
            cfg.validate()?;
            reproduce::cmd_reproduce(&cfg, experiment, scale, force, &mut OutDir::create(&out)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
