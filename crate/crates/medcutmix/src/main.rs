use std::process::ExitCode;

use clap::Parser;
use medcutmix::cli::{self, Cli};

fn main() -> ExitCode {
    #[cfg(feature = "parallel")]
    if let Ok(raw) = std::env::var("MEDCUTMIX_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::from(1);
                }
            }
            _ => {
                eprintln!("error: MEDCUTMIX_THREADS must be a positive integer, got {raw:?}");
                return ExitCode::from(1);
            }
        }
    }
    let args = Cli::parse();
    match cli::run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
