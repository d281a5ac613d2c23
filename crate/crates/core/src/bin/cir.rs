fn main() {
    std::process::exit(cir_core::cli::main_with_args(std::env::args_os()));
}
