fn main() {
    std::process::exit(losspaint::cli::run(std::env::args_os()));
}
