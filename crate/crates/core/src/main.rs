fn main() {
    std::process::exit(tfqkd::cli::main_with_args(std::env::args_os()));
}
