fn main() {
    std::process::exit(ctsdr::cli::main_with_args(std::env::args_os()));
}
