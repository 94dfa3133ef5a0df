fn main() {
    std::process::exit(orim_cli::run());
}
