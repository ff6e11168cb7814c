fn main() {
    std::process::exit(trunet::cli::main());
}
