fn main() {
    std::process::exit(chain_surgeon::cli::run(std::env::args_os()));
}
