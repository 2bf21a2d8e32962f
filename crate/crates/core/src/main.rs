fn main() {
    std::process::exit(transformer_bounds::cli::run_cli(std::env::args_os()));
}
