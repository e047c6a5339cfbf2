fn main() {
    std::process::exit(cat_core::cli::run(std::env::args_os()));
}
