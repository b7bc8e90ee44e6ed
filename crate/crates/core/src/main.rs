fn main() {
    std::process::exit(mapmatch::cli::run(std::env::args_os()));
}
