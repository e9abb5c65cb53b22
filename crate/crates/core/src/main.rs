fn main() {
    std::process::exit(mixbt::cli::run(std::env::args_os()));
}
