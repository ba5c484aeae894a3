fn main() {
    std::process::exit(nae::cli::main_with_args(std::env::args_os()));
}
