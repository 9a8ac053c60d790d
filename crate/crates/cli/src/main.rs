fn main() {
    std::process::exit(terratrack_cli::run_cli(std::env::args_os()));
}
