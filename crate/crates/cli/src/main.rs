fn main() {
    std::process::exit(fairlens_cli::run(std::env::args_os()));
}
