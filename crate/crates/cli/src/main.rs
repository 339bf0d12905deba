use std::process::ExitCode;

fn main() -> ExitCode {
    qpcm_cli::main_with(std::env::args_os())
}
