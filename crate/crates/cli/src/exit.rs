//! Process exit codes.

use treeguard_core::Error;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_SCHEMA: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

/// Exit code for a failed command: input and parse problems give 2, schema
/// mismatches 3, broken invariants and anything unclassified 4.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return core_code(e);
        }
        if cause.is::<std::io::Error>() || cause.is::<csv::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_INPUT;
        }
    }
    EXIT_INTERNAL
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::SchemaMismatch(_) => EXIT_SCHEMA,
        Error::Fit { source, .. } => core_code(source),
        Error::Invariant(_) => EXIT_INTERNAL,
        _ => EXIT_INPUT,
    }
}
