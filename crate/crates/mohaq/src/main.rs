fn main() {
    std::process::exit(mohaq::cli::run(std::env::args_os()));
}
