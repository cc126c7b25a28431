fn main() -> std::process::ExitCode {
    exwave::cli::run(std::env::args_os())
}
