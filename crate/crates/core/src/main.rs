fn main() {
    std::process::exit(dosesim::cli::main());
}
