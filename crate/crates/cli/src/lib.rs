//! Command-line surface of treeguard: dataset preparation, training,
//! evaluation, feature selection, grid search and streaming detection.

pub mod args;
pub mod commands;
pub mod detect;
pub mod exit;
pub mod prepared;

pub use args::{Cli, Command, Profile};
pub use exit::exit_code;

/// Run a parsed command line on a pool of `cli.threads` workers.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let Cli { threads, command } = cli;
    treeguard_core::with_threads(threads, move || match &command {
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::SelectFeatures(a) => commands::select(a),
        Command::GridSearch(a) => commands::grid(a),
        Command::Detect(a) => commands::detect(a),
        Command::Synth(a) => commands::synth(a),
    })?
}
