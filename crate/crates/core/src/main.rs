fn main() {
    std::process::exit(lipgan::cli::main(std::env::args_os()));
}
