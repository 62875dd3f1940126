use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsolchain::{execute, parse_config, prepare_output_dir, selftest, with_threads, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "qsolchain", version, about = "Qubit entanglement mediated by a classical spin-chain soliton")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Free soliton profiles, conservation laws and deformed trajectories.
    Soliton(RunArgs),
    /// Qubit–spin entropy during the first coupling and the choice of t1.
    Stage1(RunArgs),
    /// Site entropy profiles of the chain for each spin in `s_list`.
    Stage2(RunArgs),
    /// Concurrence of the two qubits during the second coupling.
    Concurrence(RunArgs),
    /// All of the above, sharing one trajectory bundle.
    Pipeline(RunArgs),
    /// Runs the oracle checks.
    Selftest {
        /// Worker threads, 0 for one per core.
        #[arg(long, env = "QSOLCHAIN_THREADS", default_value_t = 0)]
        threads: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, env = "QSOLCHAIN_THREADS", default_value_t = 0)]
    threads: usize,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn run_command(command: Command, args: RunArgs) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    for warning in cfg.protocol.warnings() {
        eprintln!("warning: {warning}");
    }
    prepare_output_dir(&args.out, args.force)?;
    let summary = with_threads(args.threads, || execute(command, &cfg, &args.out))??;
    if let Some(t1) = summary.t1 {
        println!("t1 = {t1}");
    }
    if let Some(t2) = summary.t2 {
        println!("t2 = {t2}");
    }
    if let Some(c) = summary.peak_concurrence {
        println!("peak concurrence = {c}");
    }
    for file in &summary.files {
        println!("wrote {}", file.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Sub::Soliton(a) => run_command(Command::Soliton, a),
        Sub::Stage1(a) => run_command(Command::Stage1, a),
        Sub::Stage2(a) => run_command(Command::Stage2, a),
        Sub::Concurrence(a) => run_command(Command::Concurrence, a),
        Sub::Pipeline(a) => run_command(Command::Pipeline, a),
        Sub::Selftest { threads } => with_threads(threads, || selftest(&mut std::io::stdout())).and_then(|r| r),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
