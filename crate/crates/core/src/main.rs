fn main() -> std::process::ExitCode {
    sempc::cli::main_with_args(std::env::args_os())
}
