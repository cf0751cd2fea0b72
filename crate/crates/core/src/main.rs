fn main() {
    std::process::exit(tvdro::cli::main_with_args(std::env::args_os()));
}
