fn main() {
    std::process::exit(photonlab::cli::run(std::env::args_os()));
}
