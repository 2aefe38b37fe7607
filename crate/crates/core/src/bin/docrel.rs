fn main() {
    std::process::exit(docrel::cli::main_with_args(std::env::args_os()));
}
