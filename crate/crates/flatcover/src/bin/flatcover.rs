fn main() {
    std::process::exit(flatcover::cli::main_with_args(std::env::args_os()));
}
