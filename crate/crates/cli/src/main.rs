fn main() {
    std::process::exit(hmloc_cli::main_with(std::env::args_os()));
}
