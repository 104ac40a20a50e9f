fn main() {
    std::process::exit(dacml::cli::run(std::env::args_os()));
}
