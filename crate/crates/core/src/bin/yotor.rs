fn main() {
    std::process::exit(yotor::cli::run(std::env::args_os()));
}
