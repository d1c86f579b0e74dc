fn main() {
    std::process::exit(enbedkit::cli::main_with_args(std::env::args_os()));
}
