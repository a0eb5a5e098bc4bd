fn main() {
    std::process::exit(fracut::cli::main_with_args(std::env::args_os()));
}
