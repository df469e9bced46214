fn main() {
    std::process::exit(frame_contrast::cli::run(std::env::args_os()));
}
