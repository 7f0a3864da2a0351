fn main() {
    std::process::exit(qpkr_cli::app::main_with_args(std::env::args_os()));
}
