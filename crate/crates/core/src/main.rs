fn main() {
    std::process::exit(sucpa::cli::dispatch(std::env::args_os()));
}
