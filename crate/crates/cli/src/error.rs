use spun_core::error::CoreError;
use spun_nn::NnError;
use thiserror::Error;

/// Bad input or configuration.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct Invalid(pub String);

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

fn nn_code(e: &NnError) -> i32 {
    match e {
        NnError::NonFinite { .. } | NnError::NoStore | NnError::NonScalarLoss(_) | NnError::DuplicateParam(_) => {
            EXIT_RUNTIME
        }
        NnError::Io(io) => io_code(io),
        _ => EXIT_INVALID,
    }
}

fn io_code(e: &std::io::Error) -> i32 {
    if e.kind() == std::io::ErrorKind::NotFound { EXIT_INVALID } else { EXIT_RUNTIME }
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::ConvergenceFailure { .. } | CoreError::DivergenceDetected(_) => EXIT_RUNTIME,
        CoreError::Io(io) => io_code(io),
        CoreError::Nn(nn) => nn_code(nn),
        _ => EXIT_INVALID,
    }
}

/// Exit status for an error: 2 for validation failures, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<serde_json::Error>() {
            return EXIT_INVALID;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_code(e);
        }
        if let Some(e) = cause.downcast_ref::<NnError>() {
            return nn_code(e);
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return io_code(e);
        }
    }
    EXIT_RUNTIME
}
