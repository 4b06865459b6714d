fn main() {
    std::process::exit(gradshift::cli::main_with_args(std::env::args_os()));
}
