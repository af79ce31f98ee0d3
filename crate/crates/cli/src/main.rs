use std::process::ExitCode;

use tro_cli::CliError;

fn main() -> ExitCode {
    match tro_cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(u) => {
                    let _ = u.print();
                }
                CliError::Core(c) => eprintln!("error: {c}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
