use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMOFUSE_LOG", "info")).init();
    if let Err(e) = emofuse_cli::run(emofuse_cli::Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
