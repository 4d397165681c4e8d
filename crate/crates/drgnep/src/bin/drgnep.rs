use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(drgnep::cli::run(std::env::args_os()))
}
