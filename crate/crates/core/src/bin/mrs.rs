fn main() {
    std::process::exit(mrs::cli::main_with_args(std::env::args_os()));
}
