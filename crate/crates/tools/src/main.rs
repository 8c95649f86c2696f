fn main() {
    std::process::exit(tactile_tools::cli::run(std::env::args_os()));
}
