fn main() {
    std::process::exit(pipeline_fusion::cli::run_from_args(std::env::args_os()));
}
