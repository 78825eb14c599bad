fn main() {
    std::process::exit(attralign_cli::dispatch(std::env::args_os()));
}
