use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use she_cli::{run, Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            match &e {
                CliError::Schema(list) => {
                    // machine-readable list on stdout, summary on stderr
                    let _ = writeln!(out, "{}", serde_json::json!({ "errors": list }));
                    eprintln!("error: {e}");
                    for v in list {
                        eprintln!("  {v}");
                    }
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
