fn main() {
    std::process::exit(spinmetro::cli::main());
}
