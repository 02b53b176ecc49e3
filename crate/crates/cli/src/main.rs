use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use symdepth::commands::{augment, eval, gradcheck, synth, train};
use symdepth::{exit, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "symdepth", version, about = "Depth/semantics toolkit: augmentation, gradient checks, toy training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Apply NearFarMix to a manifest and write the mixed samples.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare tape gradients against central differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train the toy model and save its parameters.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output parameter directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        poison_step: Option<usize>,
    },
    /// Print depth and semantics metrics as key=value lines.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Parameter directory written by `train`.
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Score the ground truth against itself.
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Write a synthetic dataset at the configured model input size.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Store every n-th mask as a teacher pseudo-mask (0 = never).
        #[arg(long, default_value_t = 0)]
        teacher_every: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cmd: Command) -> Result<(), CliError> {
    let mut stdout = io::stdout().lock();
    match cmd {
        Command::Augment { manifest, out, common } => {
            let provenance = augment::run(&manifest, &out, &common.load()?)?;
            let mixed = provenance.iter().filter(|p| p.far.is_some()).count();
            writeln!(stdout, "wrote {} samples ({mixed} mixed) to {}", provenance.len(), out.display())
                .map_err(|e| CliError::io("<stdout>", e))?;
        }
        Command::Gradcheck { common, inject_fault } => {
            let cfg = common.load()?;
            gradcheck::run(gradcheck::SuiteOptions { seed: cfg.seed, inject_fault }, &mut stdout)?;
        }
        Command::Train { manifest, out, common, poison_step } => {
            let hooks = train::TrainHooks { poison_step };
            train::run(&manifest, &out, &common.load()?, hooks, &mut stdout)?;
        }
        Command::Eval { manifest, params, common, oracle } => {
            let report = eval::run(&manifest, params.as_deref(), &common.load()?, oracle)?;
            write!(stdout, "{report}").map_err(|e| CliError::io("<stdout>", e))?;
        }
        Command::Synth { out, count, teacher_every, common } => {
            let path = synth::run(&out, count, teacher_every, &common.load()?)?;
            writeln!(stdout, "{}", path.display()).map_err(|e| CliError::io("<stdout>", e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(exit::USAGE),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
