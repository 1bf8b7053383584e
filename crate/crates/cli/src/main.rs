fn main() {
    std::process::exit(wordattr_cli::run(std::env::args_os()));
}
