fn main() {
    std::process::exit(samforge::cli::run(std::env::args_os()));
}
