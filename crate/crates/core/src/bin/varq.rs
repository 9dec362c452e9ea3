fn main() {
    std::process::exit(varq::cli::main_with_args(std::env::args_os()));
}
