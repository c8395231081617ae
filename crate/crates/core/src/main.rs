fn main() {
    std::process::exit(jkiv::cli::run(std::env::args_os()));
}
