fn main() {
    std::process::exit(mdu_core::cli::cli_main(std::env::args_os()));
}
