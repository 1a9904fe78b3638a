fn main() {
    std::process::exit(shadowprice::cli::main_with_args(std::env::args_os()));
}
