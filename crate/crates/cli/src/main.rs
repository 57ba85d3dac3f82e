fn main() {
    std::process::exit(vamce_cli::run(std::env::args_os()));
}
