fn main() {
    std::process::exit(bprelab::cli::run(std::env::args_os()));
}
