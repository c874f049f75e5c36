fn main() {
    std::process::exit(tka_detect::cli::main_with_args(std::env::args_os()));
}
