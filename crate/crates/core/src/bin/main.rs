fn main() {
    std::process::exit(bimodal_cl::cli::main_with_args(std::env::args_os()));
}
