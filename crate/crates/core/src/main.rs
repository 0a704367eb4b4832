fn main() {
    std::process::exit(greedyprune::cli::run(std::env::args_os()));
}
