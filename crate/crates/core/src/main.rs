fn main() {
    std::process::exit(oea::cli::run(std::env::args_os()));
}
