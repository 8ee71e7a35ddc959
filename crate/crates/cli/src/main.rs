fn main() {
    std::process::exit(dandelion_cli::run(std::env::args_os()));
}
