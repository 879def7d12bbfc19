fn main() {
    std::process::exit(stitchvton::cli::run(std::env::args_os()));
}
