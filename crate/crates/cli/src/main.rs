fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = chns::workbench::init_threads() {
        log::info!("using {n} worker threads");
    }
    std::process::exit(chns_cli::run(std::env::args_os()));
}
