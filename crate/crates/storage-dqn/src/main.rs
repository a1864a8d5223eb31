use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(storage_dqn::cli::run() as u8)
}
