fn main() {
    std::process::exit(deeprain::cli::run(std::env::args_os()));
}
