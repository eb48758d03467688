fn main() {
    std::process::exit(culturebridge::cli::main());
}
