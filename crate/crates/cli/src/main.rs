fn main() {
    cadavae_cli::init_logging();
    std::process::exit(cadavae_cli::run(std::env::args_os()));
}
