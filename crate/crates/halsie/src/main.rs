fn main() {
    std::process::exit(halsie::cli::run());
}
