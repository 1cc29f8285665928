fn main() {
    std::process::exit(herdrec::cli::run(std::env::args_os()));
}
