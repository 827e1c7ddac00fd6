fn main() {
    std::process::exit(causal_augment::cli::run(std::env::args_os()));
}
