fn main() {
    std::process::exit(sicpln::cli::main_with_args(std::env::args_os()));
}
