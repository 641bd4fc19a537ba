fn main() {
    std::process::exit(recur_moments::cli::run(std::env::args_os()));
}
