fn main() {
    std::process::exit(camp::cli::run(std::env::args_os()));
}
