fn main() {
    std::process::exit(lorashift::cli::run(std::env::args_os()));
}
