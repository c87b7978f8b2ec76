//! `mocap`: batch front-end over the mocap-core pipelines.
//!
//! Every command writes its outputs into the `--output` directory together
//! with a `manifest.json` describing the run. All randomness derives from
//! `--seed`: frame `i` of a stage draws from a ChaCha8 stream seeded with
//! `seed ⊕ i` on that stage's stream id, so results do not depend on `--jobs`.

mod balance;
mod capture;
mod context;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use context::Context;

#[derive(Parser, Debug)]
#[command(name = "mocap", version, about = "Marker synthesis, corruption, fitting, evaluation and capture simulation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Body model: `desk`, `desk-alternate`, or a model JSON file.
    #[arg(long, global = true, default_value = "desk")]
    pub model: String,
    /// JSON configuration file; command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input file(s) or directory, depending on the command.
    #[arg(long, global = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub output: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Fitting mode.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Plain,
    NoiseAware,
    Barron,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize labeled marker frames from body parameters.
    Synth(pipeline::SynthArgs),
    /// Augment parameters and corrupt the synthesized marker frames.
    Corrupt,
    /// Long-tail analysis and oversampling of a pose set.
    Balance {
        #[command(subcommand)]
        action: balance::BalanceAction,
    },
    /// Orthographic depth maps and ground-truth heatmaps per frame.
    Render(pipeline::RenderArgs),
    /// Fit the body model to marker frames.
    Fit(pipeline::FitArgs),
    /// Compare fitted poses against reference poses.
    Eval(pipeline::EvalArgs),
    /// Simulated multi-sensor capture.
    Capture {
        #[command(subcommand)]
        action: capture::CaptureAction,
    },
    /// Flatten evaluation reports into one CSV.
    Report,
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Synth(_) => "synth".into(),
            Command::Corrupt => "corrupt".into(),
            Command::Balance { action } => format!("balance {}", action.name()),
            Command::Render(_) => "render".into(),
            Command::Fit(_) => "fit".into(),
            Command::Eval(_) => "eval".into(),
            Command::Capture { action } => format!("capture {}", action.name()),
            Command::Report => "report".into(),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut ctx = Context::new(&cli.command.name(), &cli.common)?;
    match &cli.command {
        Command::Synth(a) => pipeline::synth(&mut ctx, a)?,
        Command::Corrupt => pipeline::corrupt(&mut ctx)?,
        Command::Balance { action } => balance::run(&mut ctx, action)?,
        Command::Render(a) => pipeline::render(&mut ctx, a)?,
        Command::Fit(a) => pipeline::fit(&mut ctx, a)?,
        Command::Eval(a) => pipeline::eval(&mut ctx, a)?,
        Command::Capture { action } => capture::run(&mut ctx, action)?,
        Command::Report => pipeline::report(&mut ctx)?,
    }
    ctx.finish()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MOCAP_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
