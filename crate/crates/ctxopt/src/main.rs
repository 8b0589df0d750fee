fn main() {
    std::process::exit(ctxopt::cli::run());
}
