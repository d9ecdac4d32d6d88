fn main() {
    std::process::exit(sqdp_core::cli::main_with_args(std::env::args().collect()));
}
