fn main() -> std::process::ExitCode {
    steproute::cli::main_with_args(std::env::args_os())
}
