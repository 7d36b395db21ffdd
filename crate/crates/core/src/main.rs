fn main() {
    std::process::exit(sigmin::harness::cli::run(std::env::args_os()));
}
