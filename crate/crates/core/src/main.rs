fn main() {
    std::process::exit(sdp_presolve::cli::run(std::env::args_os()));
}
