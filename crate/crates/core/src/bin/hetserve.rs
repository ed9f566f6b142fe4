fn main() {
    std::process::exit(hetserve::cli::run());
}
