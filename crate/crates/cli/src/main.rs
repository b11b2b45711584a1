mod args;
mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::{AccountCommand, AttackCommand, Cli, Command, ScanCommand, UtilityCommand};
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Ptable(a) => commands::ptable(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Attack(AttackCommand::BoundDisclosure(mut a)) => {
            commands::bound_disclosure(&mut a)
        }
        Command::Attack(AttackCommand::Margin(mut a)) => commands::margin(&mut a),
        Command::Attack(AttackCommand::Averaging(mut a)) => commands::averaging(&mut a),
        Command::Utility(UtilityCommand::Estimate(mut a)) => commands::estimate(&mut a),
        Command::Utility(UtilityCommand::Sample(mut a)) => commands::sample(&mut a),
        Command::Scan(ScanCommand::Ve(a)) => commands::scan_ve_cmd(&a),
        Command::Scan(ScanCommand::Eps(a)) => commands::scan_eps_cmd(&a),
        Command::Account(AccountCommand::Delta(a)) => commands::delta(&a),
        Command::Account(AccountCommand::Sensitivity(a)) => commands::sensitivity_cmd(&a),
        Command::Account(AccountCommand::Budget(a)) => commands::budget(&a),
    }
}

fn main() -> ExitCode {
    let argv = match config::merge(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("sdcrisk: error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdcrisk: error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
