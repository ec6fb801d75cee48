fn main() {
    std::process::exit(bridgesafe_cli::cli_main(std::env::args_os()));
}
