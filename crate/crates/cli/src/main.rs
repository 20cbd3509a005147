fn main() {
    std::process::exit(fedalign_cli::run());
}
