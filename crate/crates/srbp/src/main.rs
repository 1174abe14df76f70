fn main() {
    std::process::exit(srbp::cli::main_from_args(std::env::args_os()));
}
