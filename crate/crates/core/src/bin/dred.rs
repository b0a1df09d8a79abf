fn main() {
    std::process::exit(dred::cli::run_cli(std::env::args_os()));
}
