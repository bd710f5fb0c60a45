fn main() {
    std::process::exit(pcdm_cli::run(std::env::args_os()));
}
