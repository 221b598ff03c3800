use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(panelcausal_cli::run(std::env::args()) as u8)
}
