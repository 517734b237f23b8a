fn main() {
    std::process::exit(qtoksim_cli::run(std::env::args_os()));
}
