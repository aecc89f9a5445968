fn main() {
    std::process::exit(mecgame::harness::cli::run(std::env::args_os()));
}
