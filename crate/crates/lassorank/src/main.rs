fn main() {
    std::process::exit(lassorank::cli::run(std::env::args_os()));
}
