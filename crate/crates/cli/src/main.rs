fn main() {
    std::process::exit(boxrefine_cli::run(std::env::args_os()));
}
