fn main() {
    std::process::exit(wentzell_cli::main_with_args(std::env::args_os()));
}
