fn main() {
    std::process::exit(expograph_cli::run(std::env::args_os()));
}
