use std::process::ExitCode;

fn main() -> ExitCode {
    hintmvs::cli::run()
}
