fn main() {
    std::process::exit(vbreg::harness::cli::run(std::env::args_os()));
}
