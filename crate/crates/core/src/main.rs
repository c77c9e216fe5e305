fn main() {
    std::process::exit(mmface::cli::run_cli(std::env::args_os()));
}
