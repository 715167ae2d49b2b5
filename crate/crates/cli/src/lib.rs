//! Config-driven runner behind the `nbdebias` binary.

pub mod commands;
pub mod config;

use nbdebias::error::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::DuplicatePair { .. }
        | Error::OutOfRange { .. }
        | Error::DimensionMismatch { .. }
        | Error::Empty(_) => EXIT_DATA,
        Error::Infeasible(_) | Error::NonFinite(_) => EXIT_NUMERIC,
    }
}
