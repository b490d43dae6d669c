mod commands;
mod run;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "flank", version, about = "Flank labels, datasets and classifiers for quadruped imagery")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Global {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker thread cap; defaults to the number of CPUs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output root; every file the command writes lands below it.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// TOML file whose values override the flags.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Write a small synthetic scene set with annotations.
    Fixture(commands::FixtureArgs),
    /// Derive a flank label for every annotation of one source.
    DeriveLabels(commands::DeriveArgs),
    /// Crop labeled annotations and write a dataset manifest.
    BuildDataset(commands::BuildArgs),
    /// Label distribution report over one or more sources.
    Stats(commands::StatsArgs),
    /// Write augmented samples of a manifest for inspection.
    AugmentPreview(commands::PreviewArgs),
    /// Train the classifier in one or both phases.
    Train(commands::TrainArgs),
    /// Accuracy and confusion of a checkpoint on manifests.
    Evaluate(commands::EvaluateArgs),
    /// Retrain with an increasing number of frozen layers.
    Sweep(commands::SweepArgs),
    /// Species-exclusive train/validation split.
    Split(commands::SplitArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Fixture(_) => "fixture",
            Self::DeriveLabels(_) => "derive-labels",
            Self::BuildDataset(_) => "build-dataset",
            Self::Stats(_) => "stats",
            Self::AugmentPreview(_) => "augment-preview",
            Self::Train(_) => "train",
            Self::Evaluate(_) => "evaluate",
            Self::Sweep(_) => "sweep",
            Self::Split(_) => "split",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    Strict,
    Anchor,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatArg {
    /// The toolkit's own annotation document.
    Canonical,
    /// COCO keypoint JSON.
    Coco,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseArg {
    #[value(name = "1")]
    #[serde(rename = "1")]
    One,
    #[value(name = "2")]
    #[serde(rename = "2")]
    Two,
    #[value(name = "both")]
    #[serde(rename = "both")]
    Both,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillArg {
    Edge,
    Black,
}

fn read_config(path: &PathBuf) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
    text.parse::<toml::Table>()
        .with_context(|| format!("config: {} is not valid TOML", path.display()))
}

/// Applies the config file: top-level keys override global flags, the
/// table named after the subcommand overrides its flags.
fn resolve(cli: Cli) -> Result<(Global, Command)> {
    let Some(path) = cli.global.config.clone() else {
        return Ok((cli.global, cli.command));
    };
    let mut table = read_config(&path)?;
    let name = cli.command.name();
    let section = match table.remove(name) {
        Some(toml::Value::Table(t)) => Some(t),
        Some(_) => anyhow::bail!("config: [{name}] must be a table"),
        None => None,
    };
    let known = commands::COMMAND_NAMES;
    table.retain(|k, _| !known.contains(&k));
    let mut global = run::overlay(&cli.global, Some(&table), "global")?;
    global.config = Some(path);
    let s = section.as_ref();
    let command = match cli.command {
        Command::Fixture(a) => Command::Fixture(run::overlay(&a, s, name)?),
        Command::DeriveLabels(a) => Command::DeriveLabels(run::overlay(&a, s, name)?),
        Command::BuildDataset(a) => Command::BuildDataset(run::overlay(&a, s, name)?),
        Command::Stats(a) => Command::Stats(run::overlay(&a, s, name)?),
        Command::AugmentPreview(a) => Command::AugmentPreview(run::overlay(&a, s, name)?),
        Command::Train(a) => Command::Train(run::overlay(&a, s, name)?),
        Command::Evaluate(a) => Command::Evaluate(run::overlay(&a, s, name)?),
        Command::Sweep(a) => Command::Sweep(run::overlay(&a, s, name)?),
        Command::Split(a) => Command::Split(run::overlay(&a, s, name)?),
    };
    Ok((global, command))
}

fn snapshot(global: &Global, command: &Command) -> Result<serde_json::Value> {
    let args = match command {
        Command::Fixture(a) => serde_json::to_value(a),
        Command::DeriveLabels(a) => serde_json::to_value(a),
        Command::BuildDataset(a) => serde_json::to_value(a),
        Command::Stats(a) => serde_json::to_value(a),
        Command::AugmentPreview(a) => serde_json::to_value(a),
        Command::Train(a) => serde_json::to_value(a),
        Command::Evaluate(a) => serde_json::to_value(a),
        Command::Sweep(a) => serde_json::to_value(a),
        Command::Split(a) => serde_json::to_value(a),
    }?;
    // thread count and verbosity do not change results
    Ok(serde_json::json!({
        "seed": global.seed,
        "out": global.out,
        "command": command.name(),
        "args": args,
    }))
}

fn init_logging(global: &Global) {
    let level = if global.quiet {
        log::LevelFilter::Error
    } else {
        match global.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            2 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
}

fn dispatch(global: &Global, command: &Command, run: &mut run::Run) -> Result<()> {
    match command {
        Command::Fixture(a) => commands::fixture(global, a, run),
        Command::DeriveLabels(a) => commands::derive_labels(a, run),
        Command::BuildDataset(a) => commands::build_dataset(a, run),
        Command::Stats(a) => commands::stats(a, run),
        Command::AugmentPreview(a) => commands::augment_preview(global, a, run),
        Command::Train(a) => commands::train(global, a, run),
        Command::Evaluate(a) => commands::evaluate(a, run),
        Command::Sweep(a) => commands::sweep(global, a, run),
        Command::Split(a) => commands::split(a, run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = (|| -> Result<()> {
        let (global, command) = resolve(cli)?;
        init_logging(&global);
        if let Some(n) = global.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .context("threads: cannot configure the worker pool")?;
        }
        let snap = snapshot(&global, &command)?;
        let mut run = run::Run::new(command.name(), &global.out, &snap)?;
        let result = dispatch(&global, &command, &mut run);
        run.finish(result.as_ref().err())?;
        result
    })();
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
