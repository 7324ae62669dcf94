use std::process::ExitCode;

fn main() -> ExitCode {
    fshapes::cli::main_with_args(std::env::args_os())
}
