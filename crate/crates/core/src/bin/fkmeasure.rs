fn main() {
    std::process::exit(fkmeasure::cli::run(std::env::args_os()));
}
