fn main() -> std::process::ExitCode {
    halfsphere::cli::run(std::env::args_os())
}
