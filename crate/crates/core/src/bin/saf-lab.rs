fn main() {
    std::process::exit(saf_lab::cli::run(std::env::args_os()));
}
