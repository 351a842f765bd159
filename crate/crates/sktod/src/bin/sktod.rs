fn main() {
    std::process::exit(sktod::cli::run(std::env::args()));
}
