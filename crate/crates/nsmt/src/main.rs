fn main() {
    std::process::exit(nsmt::cli::run(std::env::args_os()));
}
