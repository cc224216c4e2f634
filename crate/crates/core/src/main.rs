fn main() {
    std::process::exit(mscat::cli::run(std::env::args().collect()));
}
