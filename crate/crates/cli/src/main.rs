//! `vton`: command-line driver for the try-on pipeline.

mod commands;
mod config;
mod manifest;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use toml::Value;

use config::{parse_value, ConfigError, RunConfig};
use pipeline::CliError;

#[derive(Debug, Parser)]
#[command(name = "vton", version, about = "Text-editable virtual try-on at desk scale")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (`output_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Seed (`seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (`workers`).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Dataset root (`data.root`).
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Set any config key; the value is parsed as TOML, else taken as a string.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Caption persons and garments of the configured split.
    Caption {
        /// LMM backend (`captioner.backend`): mock or http.
        #[arg(long)]
        backend: Option<String>,
        /// Mock answer fixture (`captioner.fixture`).
        #[arg(long, value_name = "FILE")]
        fixture: Option<PathBuf>,
    },
    /// Write fine, coarse and randomly dilated masks.
    BuildMasks,
    /// Train the toy main network on the training split.
    TrainToy {
        /// Optimizer steps (`train.steps`).
        #[arg(long)]
        steps: Option<usize>,
        /// Batch size (`train.batch_size`).
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Generate try-on images.
    Tryon {
        /// Use prompt-aware mask generation (`tryon.pmg = true`).
        #[arg(long, conflicts_with = "no_pmg")]
        pmg: bool,
        /// Inpaint the coarse mask directly (`tryon.pmg = false`).
        #[arg(long)]
        no_pmg: bool,
        /// Coarse-pass stop fraction (`tryon.sigma`).
        #[arg(long)]
        sigma: Option<f64>,
        /// Denoising steps (`tryon.steps`).
        #[arg(long)]
        steps: Option<usize>,
        /// Caption override `name=value`, repeatable (`tryon.overrides`).
        #[arg(long = "override", value_name = "NAME=VALUE")]
        overrides: Vec<String>,
        /// Model checkpoint (`tryon.checkpoint`).
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Base ratio, alignment accuracy, diversity, SSIM and STS.
    Evaluate {
        /// Attribute held fixed (`eval.attribute`).
        #[arg(long)]
        attribute: Option<String>,
        /// Target caption (`eval.target`).
        #[arg(long)]
        target: Option<String>,
        /// Reference labels for STS (`eval.truth`).
        #[arg(long, value_name = "FILE")]
        truth: Option<PathBuf>,
        /// Also run the stop-fraction sweep (`eval.sigma_sweep = true`).
        #[arg(long)]
        sigma_sweep: bool,
    },
    /// Write a synthetic dataset (train and test splits) to the output directory.
    GenSynthetic {
        /// Samples per split (`synthetic.count`).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn path_value(p: &std::path::Path) -> Value {
    Value::String(p.display().to_string())
}

/// Flag values as `(key path, value)` overrides, applied after `--set`.
fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>, ConfigError> {
    let mut out = Vec::new();
    for item in &cli.set {
        let (k, v) = item.split_once('=').ok_or_else(|| ConfigError::Key {
            key: item.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        out.push((k.trim().to_string(), parse_value(v.trim())));
    }
    let mut put = |k: &str, v: Value| out.push((k.to_string(), v));
    if let Some(p) = &cli.output {
        put("output_dir", path_value(p));
    }
    if let Some(s) = cli.seed {
        put("seed", Value::Integer(s as i64));
    }
    if let Some(w) = cli.workers {
        put("workers", Value::Integer(w as i64));
    }
    if let Some(p) = &cli.data {
        put("data.root", path_value(p));
    }
    match &cli.command {
        Command::Caption { backend, fixture } => {
            if let Some(b) = backend {
                put("captioner.backend", Value::String(b.clone()));
            }
            if let Some(f) = fixture {
                put("captioner.fixture", path_value(f));
            }
        }
        Command::TrainToy { steps, batch_size } => {
            if let Some(s) = steps {
                put("train.steps", Value::Integer(*s as i64));
            }
            if let Some(b) = batch_size {
                put("train.batch_size", Value::Integer(*b as i64));
            }
        }
        Command::Tryon {
            pmg,
            no_pmg,
            sigma,
            steps,
            overrides,
            checkpoint,
        } => {
            if *pmg || *no_pmg {
                put("tryon.pmg", Value::Boolean(*pmg));
            }
            if let Some(s) = sigma {
                put("tryon.sigma", Value::Float(*s));
            }
            if let Some(s) = steps {
                put("tryon.steps", Value::Integer(*s as i64));
            }
            if !overrides.is_empty() {
                put("tryon.overrides", Value::Array(overrides.iter().map(|o| Value::String(o.clone())).collect()));
            }
            if let Some(c) = checkpoint {
                put("tryon.checkpoint", path_value(c));
            }
        }
        Command::Evaluate {
            attribute,
            target,
            truth,
            sigma_sweep,
        } => {
            if let Some(a) = attribute {
                put("eval.attribute", Value::String(a.clone()));
            }
            if let Some(t) = target {
                put("eval.target", Value::String(t.clone()));
            }
            if let Some(t) = truth {
                put("eval.truth", path_value(t));
            }
            if *sigma_sweep {
                put("eval.sigma_sweep", Value::Boolean(true));
            }
        }
        Command::GenSynthetic { count } => {
            if let Some(c) = count {
                put("synthetic.count", Value::Integer(*c as i64));
            }
        }
        Command::BuildMasks | Command::ShowConfig => {}
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides(cli)?)?;
    if let Command::ShowConfig = cli.command {
        return Ok(cfg.to_toml());
    }
    let manifest = tryon_core::exec::with_workers(cfg.workers, |exec| match &cli.command {
        Command::Caption { .. } => commands::caption(&cfg, exec),
        Command::BuildMasks => commands::build_masks(&cfg, exec),
        Command::TrainToy { .. } => commands::train_toy(&cfg, exec),
        Command::Tryon { .. } => commands::tryon(&cfg, exec),
        Command::Evaluate { .. } => commands::evaluate(&cfg, exec),
        Command::GenSynthetic { .. } => commands::gen_synthetic(&cfg),
        Command::ShowConfig => unreachable!("handled above"),
    })?;
    let rel = manifest.write(&cfg.output_dir)?;
    Ok(format!(
        "{}\nmanifest: {}",
        serde_json::to_string_pretty(&manifest.details).expect("details serialize"),
        cfg.output_dir.join(rel).display()
    ))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
