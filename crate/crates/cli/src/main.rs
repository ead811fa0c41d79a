fn main() {
    std::process::exit(cidm_cli::run(std::env::args_os()));
}
