fn main() {
    let code = gatedclip::cli::run(std::env::args_os());
    std::process::exit(code);
}
