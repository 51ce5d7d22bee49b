fn main() {
    std::process::exit(edgenet::pipeline::cli::run(std::env::args_os()));
}
