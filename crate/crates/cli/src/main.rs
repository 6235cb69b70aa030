fn main() {
    std::process::exit(kl_gauss_cli::run(std::env::args_os()));
}
