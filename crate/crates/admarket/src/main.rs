use std::process::ExitCode;

fn main() -> ExitCode {
    admarket::cli::main()
}
