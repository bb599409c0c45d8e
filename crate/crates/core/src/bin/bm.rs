fn main() {
    std::process::exit(bridgematch::cli::main_with_args(std::env::args_os()));
}
