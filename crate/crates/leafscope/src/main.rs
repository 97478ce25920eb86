fn main() {
    std::process::exit(leafscope::cli::run_command(std::env::args_os()));
}
