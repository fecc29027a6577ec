fn main() {
    std::process::exit(tcentral_cli::run(std::env::args_os()));
}
