fn main() {
    std::process::exit(agt::cli::main_with_args(std::env::args_os()));
}
