fn main() {
    std::process::exit(smartbird::cli::run(std::env::args_os()));
}
