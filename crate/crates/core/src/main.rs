fn main() {
    std::process::exit(o2mkd::harness::cli::run(std::env::args_os()));
}
