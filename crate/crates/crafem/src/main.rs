fn main() {
    std::process::exit(crafem::cli::main_entry());
}
