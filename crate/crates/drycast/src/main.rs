fn main() {
    std::process::exit(drycast::cli::run());
}
