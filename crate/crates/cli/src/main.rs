fn main() {
    std::process::exit(intrinsic_cli::run(std::env::args_os()));
}
