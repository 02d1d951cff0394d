fn main() {
    std::process::exit(aesthetics::cli::run());
}
