fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let code = ridgeline::cli::main_with_args(std::env::args().collect(), std::env::var(ridgeline::cli::SEED_ENV).ok());
    std::process::exit(code);
}
