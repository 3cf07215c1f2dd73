fn main() {
    std::process::exit(pvad_core::cli::main_with_args(std::env::args_os()));
}
