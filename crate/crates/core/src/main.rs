fn main() {
    std::process::exit(grouptest::cli::run());
}
