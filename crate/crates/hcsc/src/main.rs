fn main() {
    std::process::exit(hcsc::cli::main_with_args(std::env::args_os()));
}
