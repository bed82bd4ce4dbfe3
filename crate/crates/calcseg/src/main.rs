fn main() {
    std::process::exit(calcseg::cli::main_with_args(std::env::args_os()));
}
