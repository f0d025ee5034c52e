fn main() {
    std::process::exit(rotator::cli::dispatch(std::env::args()));
}
