fn main() {
    std::process::exit(distlab::cli::cli_main(std::env::args_os()));
}
