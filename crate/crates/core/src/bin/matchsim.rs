fn main() {
    std::process::exit(matchsim::cli::dispatch(std::env::args_os()));
}
