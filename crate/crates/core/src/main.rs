fn main() {
    std::process::exit(areapo::cli::run(std::env::args_os()));
}
