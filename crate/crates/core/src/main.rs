fn main() {
    std::process::exit(ehom::cli::main_with_args(std::env::args_os()));
}
