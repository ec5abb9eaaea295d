fn main() {
    std::process::exit(antiblur::cli::run(std::env::args_os()));
}
