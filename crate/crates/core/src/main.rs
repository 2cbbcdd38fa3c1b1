fn main() {
    std::process::exit(gmpce::cli::main_with_args(std::env::args_os()));
}
