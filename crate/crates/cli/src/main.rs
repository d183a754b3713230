fn main() {
    std::process::exit(ghostsim_cli::main_with_args(std::env::args_os()));
}
