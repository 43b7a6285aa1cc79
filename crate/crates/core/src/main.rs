fn main() {
    std::process::exit(bayeseg::cli::run(std::env::args_os()));
}
