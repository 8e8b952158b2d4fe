fn main() {
    std::process::exit(skidgp_cli::run(std::env::args_os()));
}
