use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sample rate {sample_rate} Hz cannot resolve {max_frequency} Hz (Nyquist)")]
    Nyquist { sample_rate: f64, max_frequency: f64 },

    #[error("duplicate sensor {station_id}/{sensor_id}")]
    DuplicateSensor { station_id: String, sensor_id: String },

    #[error("record too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("records are not aligned: {0}")]
    Misaligned(String),

    #[error("empty subset: {0}")]
    EmptySubset(String),

    #[error("insufficient Monte-Carlo trials: {0}")]
    InsufficientTrials(String),

    #[error("fit error: {0}")]
    Fit(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
