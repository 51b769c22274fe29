use std::process::ExitCode;

use clap::Parser as _;

use treeguard_cli::{exit_code, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed pipe (`treeguard ... | head`) is a normal way to stop.
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
        || err
            .chain()
            .filter_map(|c| c.downcast_ref::<treeguard_core::Error>())
            .any(|e| matches!(e, treeguard_core::Error::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe))
}
