mod config;
mod error;
mod manifest;
mod stages;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use crushgraph::graphset::Task;
use crushgraph::learn::Ablation;

use crate::config::{PipelineConfig, CONFIG_ENV};
use crate::error::{exit, CliError};
use crate::manifest::{ManifestEntry, Recorder, MANIFEST_SCHEMA};
use crate::stages::Context;

#[derive(Debug, Parser)]
#[command(name = "crushgraph", version, about = "Synthetic particle crushing and strength prediction pipeline")]
struct Cli {
    /// Config file, or a bundled preset name (default, desk).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<String>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulate and features.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Process only the first N items.
    #[arg(long, global = true)]
    limit: Option<usize>,
    /// Restrict to one generalisation task (default: all three).
    #[arg(long, global = true, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, global = true, value_enum, default_value = "baseline")]
    ablation: AblationArg,
    /// Run directory; overrides the config `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Expand the config into particle types.
    Gen,
    /// Tessellate and crush every test.
    Simulate,
    /// Fit a Weibull distribution per particle type.
    FitWeibull,
    /// Particle descriptors and fragment features.
    Features,
    /// Join features and fitted strengths into labelled graphs.
    Graphs,
    /// Hold-out splits per task.
    Split,
    Train,
    Eval,
    /// Train and evaluate all three model variants.
    Ablate,
    /// Input-gradient attribution of a trained model.
    Attribute,
    /// Summary table and feature histograms.
    Stats,
    /// Load-displacement and Weibull figures.
    Plot,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Simulate => "simulate",
            Command::FitWeibull => "fit-weibull",
            Command::Features => "features",
            Command::Graphs => "graphs",
            Command::Split => "split",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Attribute => "attribute",
            Command::Stats => "stats",
            Command::Plot => "plot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Diameter,
    Shape,
    Axis,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Diameter => Task::Diameter,
            TaskArg::Shape => Task::Shape,
            TaskArg::Axis => Task::Axis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    Baseline,
    NoPmd,
    NoNef,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Baseline => Ablation::Baseline,
            AblationArg::NoPmd => Ablation::NoPmd,
            AblationArg::NoNef => Ablation::NoNef,
        }
    }
}

/// Flags that change a command's outputs, as recorded in the manifest.
/// Paths and worker counts are left out so replays elsewhere compare equal.
fn recorded_args(cli: &Cli) -> Vec<String> {
    let mut args = Vec::new();
    if let Some(n) = cli.limit {
        args.extend(["--limit".to_string(), n.to_string()]);
    }
    if let Some(t) = cli.task {
        args.extend(["--task".to_string(), Task::from(t).name().to_string()]);
    }
    if matches!(cli.command, Command::Train | Command::Eval | Command::Attribute) {
        args.extend(["--ablation".to_string(), Ablation::from(cli.ablation).name().to_string()]);
    }
    args
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.out.clone());
    let workers = match cli.workers {
        Some(0) => return Err(CliError::Config("--workers must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let ctx = Context {
        config,
        workers,
        limit: cli.limit,
    };
    let tasks: Vec<Task> = cli.task.map_or(Task::ALL.to_vec(), |t| vec![t.into()]);
    let ablation = Ablation::from(cli.ablation);
    let mut rec = Recorder::new(&out)?;
    match cli.command {
        Command::Gen => stages::gen(&ctx, &mut rec)?,
        Command::Simulate => stages::simulate(&ctx, &mut rec)?,
        Command::FitWeibull => stages::fit_weibull(&ctx, &mut rec)?,
        Command::Features => stages::features(&ctx, &mut rec)?,
        Command::Graphs => stages::graphs(&ctx, &mut rec)?,
        Command::Split => stages::split(&ctx, &mut rec, &tasks)?,
        Command::Train => stages::train_cmd(&ctx, &mut rec, &tasks, ablation)?,
        Command::Eval => stages::eval_cmd(&mut rec, &tasks, ablation)?,
        Command::Ablate => stages::ablate(&ctx, &mut rec, &tasks)?,
        Command::Attribute => stages::attribute_cmd(&mut rec, &tasks, ablation)?,
        Command::Stats => stages::stats(&mut rec)?,
        Command::Plot => stages::plot(&ctx, &mut rec)?,
    }
    rec.finish(ManifestEntry {
        schema: MANIFEST_SCHEMA.to_string(),
        command: cli.command.name().to_string(),
        args: recorded_args(cli),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: ctx.config.seed,
        config_sha256: ctx.config.digest(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
