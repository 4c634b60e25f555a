fn main() {
    std::process::exit(fglstm_cli::run(std::env::args_os()));
}
