fn main() {
    std::process::exit(wc4dvar_cli::main_with_args(std::env::args_os()));
}
