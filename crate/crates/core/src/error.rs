use std::io;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("matrix is not Hermitian (asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal fraction {off:.3e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown preset scene `{0}`")]
    UnknownPreset(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("path delay {delay_s:.3e} s exceeds one OFDM symbol ({symbol_s:.3e} s)")]
    DelayTooLong { delay_s: f64, symbol_s: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss {loss:.4e} > 10x initial {initial:.4e}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version: file has {found}, this build reads {expected}")]
    Version { found: u16, expected: u16 },

    #[error("truncated input while reading {0}")]
    Truncated(&'static str),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("scene parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
