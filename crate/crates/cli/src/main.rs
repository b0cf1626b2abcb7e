use std::path::PathBuf;
use std::process::ExitCode;

use cadsketch_core::pipeline::commands::{run, Command, Invocation};
use cadsketch_core::pipeline::{PipelineError, RunConfig};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Raster-to-parametric CAD sketch conversion.
#[derive(Parser)]
#[command(name = "cadsketch", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the run seed (and the generator seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Input file or directory, where the subcommand takes one.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate a seeded synthetic corpus (sketches, renders, manifest).
    SynthGen(Common),
    /// Rasterize a sketch JSONL file (--input) to PGM images.
    Render(Common),
    /// Render a sketch JSONL file (--input) in hand-drawn style.
    Handdraw(Common),
    /// Train the neural renderer.
    TrainSrn(Common),
    /// Pretrain the parameterizer through the frozen renderer.
    PretrainSpn(Common),
    /// Fine-tune the parameterizer on labeled sketches.
    FinetuneSpn(Common),
    /// Mixed labeled and rendering-supervised training.
    TrainSemi(Common),
    /// Zero-shot parameterization of images.
    Infer(Common),
    /// Test-time optimization through the frozen renderer.
    Ttopt(Common),
    /// Score a parameterizer on a corpus split and write a JSON report.
    Eval(Common),
    /// Finite-difference check of every differentiable op.
    Gradcheck(Common),
}

impl Sub {
    fn split(self) -> (Command, Common) {
        match self {
            Sub::SynthGen(c) => (Command::SynthGen, c),
            Sub::Render(c) => (Command::Render, c),
            Sub::Handdraw(c) => (Command::Handdraw, c),
            Sub::TrainSrn(c) => (Command::TrainSrn, c),
            Sub::PretrainSpn(c) => (Command::PretrainSpn, c),
            Sub::FinetuneSpn(c) => (Command::FinetuneSpn, c),
            Sub::TrainSemi(c) => (Command::TrainSemi, c),
            Sub::Infer(c) => (Command::Infer, c),
            Sub::Ttopt(c) => (Command::Ttopt, c),
            Sub::Eval(c) => (Command::Eval, c),
            Sub::Gradcheck(c) => (Command::Gradcheck, c),
        }
    }
}

fn execute(cmd: Command, args: Common) -> Result<bool, PipelineError> {
    let mut config = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config = config.with_seed(seed);
    }
    let outcome = run(cmd, &Invocation { config, out: args.out.clone(), input: args.input })?;
    let notes = serde_json::Value::Object(outcome.manifest.notes.clone());
    println!("{}", serde_json::to_string_pretty(&notes).expect("notes serialize"));
    println!("wrote {} output(s) to {}", outcome.manifest.outputs.len(), args.out.display());
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (cmd, args) = cli.command.split();
    match execute(cmd, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: {} failed, see the report in the output directory", cmd.name());
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
