fn main() {
    std::process::exit(ekick::cli::run(std::env::args_os()));
}
