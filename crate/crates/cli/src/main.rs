use std::process::ExitCode;

fn main() -> ExitCode {
    reshape_cli::run()
}
