fn main() {
    std::process::exit(svc_edge_cache::cli::main_with_args(std::env::args_os()));
}
