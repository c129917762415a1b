use std::io::Write;
use std::process::ExitCode;

use clap::Parser;

use matmed_cli::args::{Action, Cli};
use matmed_cli::commands::{execute, replay};
use matmed_cli::{configure_threads, CliError, CliResult};

fn run(cli: Cli) -> CliResult<Vec<String>> {
    configure_threads()?;
    let outcome = match cli.command.into_action()? {
        Action::Execute { config, out } => execute(&config, &out)?,
        Action::Replay { manifest, out } => replay(&manifest, &out)?,
    };
    Ok(outcome.report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::Usage(e.kind().to_string());
            eprintln!("{}", err.report_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(report) => {
            let mut stdout = std::io::stdout().lock();
            for line in report {
                let _ = writeln!(stdout, "{line}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            eprintln!("{}", err.report_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
