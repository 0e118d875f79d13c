use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {found:02x?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: &'static str },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("truncated buffer: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("frame declares {0} samples, limit is 2^20")]
    FrameTooLarge(u32),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("corrupt run file: {0}")]
    CorruptFile(String),

    #[error("sensor {sensor} start grid is off by {offset_s:e} s (tolerance {tolerance_s:e} s)")]
    Misaligned { sensor: String, offset_s: f64, tolerance_s: f64 },

    #[error("sensor {0} missing at deadline")]
    MissingSensor(String),

    #[error("conflicting duplicate frame for {sensor} at {start_time_ns} ns")]
    ConflictingDuplicate { sensor: String, start_time_ns: u64 },

    #[error("sensor {sensor} is incomplete: {detail}")]
    Incomplete { sensor: String, detail: String },

    #[error("collector {endpoint} unreachable after {attempts} attempts: {last}")]
    Unreachable { endpoint: String, attempts: u32, last: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = WireError> = std::result::Result<T, E>;
