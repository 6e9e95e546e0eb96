fn main() {
    std::process::exit(gtlm::cli::run(std::env::args_os()));
}
