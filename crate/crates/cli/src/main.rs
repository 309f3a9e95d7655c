fn main() {
    std::process::exit(tracelogdet_cli::run(std::env::args_os()));
}
