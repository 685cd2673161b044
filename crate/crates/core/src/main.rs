fn main() {
    std::process::exit(rdaudit::cli::main_with_args(std::env::args_os()));
}
