fn main() {
    std::process::exit(rmdn::cli::main_with_args(std::env::args_os()));
}
