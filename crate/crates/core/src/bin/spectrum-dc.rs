fn main() {
    std::process::exit(spectrum_dc::cli::run(std::env::args_os().skip(1)));
}
