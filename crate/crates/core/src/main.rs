fn main() {
    std::process::exit(gnnformer::cli::main_exit());
}
