fn main() {
    std::process::exit(galeb::cli::run(std::env::args_os()));
}
