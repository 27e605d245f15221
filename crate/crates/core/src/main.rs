use std::process::ExitCode;

fn main() -> ExitCode {
    tsmin::cli::run(std::env::args_os())
}
