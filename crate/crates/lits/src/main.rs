fn main() {
    std::process::exit(lits::harness::cli::main_with_args(std::env::args_os()));
}
