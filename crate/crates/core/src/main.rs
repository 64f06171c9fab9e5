fn main() {
    std::process::exit(mvhedge::cli::run(std::env::args_os()));
}
