fn main() {
    std::process::exit(sketchloop_service::cli::main_with_args(std::env::args_os()));
}
