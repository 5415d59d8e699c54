use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use hetnet::cli::{self, CommandError, CommandOutput};
use hetnet::optimizer::MethodChoice;

#[derive(Parser)]
#[command(name = "hetnet", version, about = "Delay-aware cell association for K-tier networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-tier association, load, coverage and delay bound for the configured biases.
    Analytic(Common),
    /// Delay-optimal association and biases.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
    },
    /// Event-driven simulation next to the analytic values.
    Simulate(Common),
    /// Sweep one variable over the grid in the [sweep] block.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Also simulate every grid point.
        #[arg(long)]
        simulate: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Auto,
    Closed,
    Numerical,
}

impl From<MethodArg> for MethodChoice {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Auto => MethodChoice::Auto,
            MethodArg::Closed => MethodChoice::ClosedForm,
            MethodArg::Numerical => MethodChoice::Numerical,
        }
    }
}

fn run(command: Command) -> Result<(CommandOutput, Option<PathBuf>), CommandError> {
    let load = |c: &Common| cli::parse_config(&c.config).and_then(|s| s.with_overrides(c.seed, c.replications));
    Ok(match command {
        Command::Analytic(c) => (cli::cmd_analytic(&load(&c)?)?, c.out),
        Command::Optimize { common, method } => (cli::cmd_optimize(&load(&common)?, method.into())?, common.out),
        Command::Simulate(c) => (cli::cmd_simulate(&load(&c)?)?, c.out),
        Command::Sweep { common, simulate } => (cli::cmd_sweep(&load(&common)?, simulate)?, common.out),
    })
}

fn write(output: &CommandOutput, out: Option<PathBuf>) -> Result<(), Box<dyn std::error::Error>> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(&path)?);
            output.table.write(&mut w)?;
            w.flush()?;
        }
        None => output.table.write(io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (output, out) = match run(cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = write(&output, out) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(output.status.exit_code() as u8)
}
