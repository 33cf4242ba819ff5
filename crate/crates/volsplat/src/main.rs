fn main() {
    std::process::exit(volsplat::cli::run(std::env::args_os()));
}
