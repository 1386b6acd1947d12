fn main() {
    std::process::exit(phreservoir::cli::run(std::env::args_os()));
}
