use std::io::{ErrorKind, Write};
use std::process::ExitCode;

use clap::Parser;
use imac_core::error::{Error, Result};
use imac_sim::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let mut stdout = std::io::stdout().lock();
    let result = imac_sim::run(&cli, &mut stdout)
        .and_then(|()| stdout.flush().map_err(|e| Error::io(imac_sim::STDOUT, e)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // A closed pipe (`imac-sim ... | head`) is not a failure.
        Err(Error::Io { source, .. }) if source.kind() == ErrorKind::BrokenPipe => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// `IMAC_SIM_THREADS` caps the worker pool; 0 or unset lets rayon decide.
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("IMAC_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("IMAC_SIM_THREADS must be a number, got '{v}'")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}
