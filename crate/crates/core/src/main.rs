fn main() {
    std::process::exit(cvxdistill::cli::main_with_args(std::env::args_os()));
}
