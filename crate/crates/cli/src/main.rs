fn main() {
    std::process::exit(precond_langevin_cli::run(std::env::args_os()));
}
