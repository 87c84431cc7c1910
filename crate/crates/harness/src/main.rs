fn main() {
    std::process::exit(cael_harness::cli::run(std::env::args_os()));
}
