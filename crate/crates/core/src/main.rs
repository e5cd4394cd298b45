fn main() {
    std::process::exit(landmark_rl::cli::main_with_args(std::env::args_os()));
}
