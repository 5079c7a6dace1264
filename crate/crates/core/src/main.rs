fn main() {
    std::process::exit(rel2text::cli::run(std::env::args_os()));
}
