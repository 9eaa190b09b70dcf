fn main() {
    std::process::exit(meshforge_cli::run(std::env::args_os()));
}
