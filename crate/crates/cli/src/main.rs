fn main() {
    std::process::exit(cardiaq_cli::run(std::env::args()));
}
