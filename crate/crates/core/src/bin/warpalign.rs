fn main() {
    std::process::exit(warpalign::cli::run_from(std::env::args_os()));
}
