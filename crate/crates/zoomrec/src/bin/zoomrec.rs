fn main() {
    std::process::exit(zoomrec::harness::cli::run_cli(std::env::args()));
}
