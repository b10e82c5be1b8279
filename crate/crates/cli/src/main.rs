use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;

use daisy_cli::commands::EXIT_ERROR;
use daisy_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    if let Err(e) = ctrlc::set_handler(move || {
        eprintln!("interrupt received; finishing in-flight work");
        flag.store(true, Ordering::SeqCst);
    }) {
        log::warn!("could not install interrupt handler: {e}");
    }
    let mut stdout = std::io::stdout();
    let code = match run(cli, Some(&cancel), &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    };
    std::process::exit(code);
}
