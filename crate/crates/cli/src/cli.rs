//! Argument parsing and command dispatch for the `iasplat` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{PipelineConfig, Profile};
use crate::error::CliError;
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(
    name = "iasplat",
    version,
    about = "Inconsistency-aware splat reconstruction pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base profile the config file is applied on top of.
    #[arg(long, global = true, value_parser = parse_profile)]
    pub profile: Option<Profile>,
    /// Extra `key=value` override, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Lift the reference view and expand it into the coarse point cloud.
    Init,
    /// Optimize the splat field against the refined video.
    Train,
    /// Generate a seeded synthetic dataset.
    Synth,
    /// Score the trained checkpoint against the dataset.
    Eval,
    /// Render the trained field along the trajectory.
    Render,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

impl Cli {
    pub fn resolve_config(&self) -> Result<PipelineConfig, CliError> {
        let base = self.profile.unwrap_or(Profile::Desk);
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path, base)?,
            None => PipelineConfig::profile(base),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{o}' is not KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| CliError::Config(format!("{}: {e}", k.trim())))?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one command and returns a short human-readable summary.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.resolve_config()?;
    Ok(match cli.command {
        Command::Synth => {
            let scene = pipeline::cmd_synth(&cfg)?;
            format!(
                "synth: {} views, {} splats, {} corrupted views -> {}",
                scene.cameras.len(),
                scene.field.len(),
                scene.corruptions.len(),
                cfg.data_dir.display()
            )
        }
        Command::Init => {
            let s = pipeline::cmd_init(&cfg)?;
            format!(
                "init: {} reference points, {} after expansion over {} views",
                s.reference_points,
                s.total_points,
                s.added.len()
            )
        }
        Command::Train => {
            let state = pipeline::cmd_train(&cfg)?;
            let last = state.log.last();
            format!(
                "train: {} iterations, {} rounds, {} splats, final loss {}",
                state.iteration,
                state.rounds.len(),
                state.field.len(),
                last.map_or("-".into(), |r| r.total.to_string())
            )
        }
        Command::Eval => {
            let r = pipeline::cmd_eval(&cfg)?;
            r.to_text().lines().take(4).collect::<Vec<_>>().join("\n")
        }
        Command::Render => {
            let n = pipeline::cmd_render(&cfg)?;
            format!("render: {n} frames")
        }
    })
}
