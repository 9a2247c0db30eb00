use std::process::ExitCode;

fn main() -> ExitCode {
    sepreg_cli::app::run(std::env::args_os())
}
