fn main() {
    std::process::exit(myodecode::cli::main_with_args(std::env::args_os()));
}
