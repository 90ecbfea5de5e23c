fn main() {
    std::process::exit(llrd::cli::run(std::env::args_os()));
}
