fn main() {
    std::process::exit(bdsdep::cli::run(std::env::args_os()));
}
