fn main() {
    std::process::exit(trace_forge::cli::run(std::env::args_os()));
}
