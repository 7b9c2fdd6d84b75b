fn main() {
    std::process::exit(coinfer::cli::cli_main(std::env::args_os()));
}
