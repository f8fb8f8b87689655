fn main() {
    std::process::exit(dlmp::cli::run_from(std::env::args_os()));
}
