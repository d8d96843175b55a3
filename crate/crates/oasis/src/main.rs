fn main() {
    std::process::exit(oasis::cli::run(std::env::args_os()));
}
