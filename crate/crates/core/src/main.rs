use std::process::ExitCode;

fn main() -> ExitCode {
    softmax_warp::cli::main_with_args(std::env::args_os())
}
