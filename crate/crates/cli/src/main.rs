use std::process::ExitCode;

fn main() -> ExitCode {
    match deepes_cli::run_from(std::env::args_os()) {
        Ok(outcome) => ExitCode::from(outcome.exit_code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
