mod commands;
mod record;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use commands::{
    EvalArgs, ExtractArgs, GenerateArgs, LyapunovArgs, PlotArgs, TrainArgs, UpsampleArgs,
};

/// Continuous-time Koopman autoencoders: simulate, train, extract the
/// generator, forecast at arbitrary times and evaluate.
#[derive(Parser, Debug)]
#[command(name = "koopflow", version, arg_required_else_help = true, args_conflicts_with_subcommands = true)]
struct Cli {
    /// Re-run the invocation recorded in a run.json.
    #[arg(long, value_name = "RUN_JSON")]
    from_config: Option<PathBuf>,

    /// With --from-config: write outputs here instead of the recorded location.
    #[arg(long, value_name = "PATH", requires = "from_config")]
    into: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Simulate a benchmark system into a dataset directory, or decimate one.
    Generate(GenerateArgs),
    /// Two-stage training; writes a checkpoint, loss history and generator.
    Train(TrainArgs),
    /// Take the principal logarithm of a checkpoint's K.
    Extract(ExtractArgs),
    /// Forecast test trajectories and score them against ground truth.
    Eval(EvalArgs),
    /// Forecast low-frequency trajectories onto a finer grid.
    Upsample(UpsampleArgs),
    /// Estimate Lyapunov exponents of a true, learned or linear flow.
    Lyapunov(LyapunovArgs),
    /// Render CSV outputs as SVG.
    Plot(PlotArgs),
}

impl Command {
    fn run(&self) -> anyhow::Result<()> {
        match self {
            Command::Generate(a) => commands::generate(a, self),
            Command::Train(a) => commands::train(a, self),
            Command::Extract(a) => commands::extract(a, self),
            Command::Eval(a) => commands::eval(a, self),
            Command::Upsample(a) => commands::upsample(a, self),
            Command::Lyapunov(a) => commands::lyapunov(a, self),
            Command::Plot(a) => commands::plot(a, self),
        }
    }

    fn redirect(&mut self, out: PathBuf) {
        match self {
            Command::Generate(a) => a.out = Some(out),
            Command::Train(a) => a.out = out,
            Command::Extract(a) => a.out = Some(out),
            Command::Eval(a) => a.out = Some(out),
            Command::Upsample(a) => a.out = out,
            Command::Lyapunov(a) => a.out = out,
            Command::Plot(a) => a.out = out,
        }
    }
}

/// Bad or missing inputs the user can fix; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("KOOPFLOW_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| usage(format!("KOOPFLOW_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(usage("KOOPFLOW_THREADS must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let command = match (cli.from_config, cli.command) {
        (Some(path), _) => {
            let mut cmd = record::load(&path)?;
            if let Some(out) = cli.into {
                cmd.redirect(out);
            }
            cmd
        }
        (None, Some(cmd)) => cmd,
        (None, None) => return Err(usage("no subcommand given (see --help)")),
    };
    command.run()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
