fn main() {
    std::process::exit(crowdface::cli::cli_main(std::env::args_os()));
}
