fn main() {
    std::process::exit(deloc_cli::run(std::env::args_os()));
}
