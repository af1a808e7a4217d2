fn main() {
    std::process::exit(searchtrace_cli::run(std::env::args_os()));
}
