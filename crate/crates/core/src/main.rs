fn main() {
    std::process::exit(addrforge::cli::run(std::env::args_os()));
}
