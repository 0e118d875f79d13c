//! From averaged cross-spectra to candidates, vetoes and exclusion limits.
//!
//! The detection statistic of a bin is the network-averaged real cross-power
//! divided by a robust local noise width. Thresholds come from simulating
//! that same statistic for an independent-noise network with the measured
//! sensor PSDs.

mod candidates;
mod injection;
mod limits;
mod pipeline;
mod response;
mod snr;
mod threshold;
mod veto;

pub use candidates::{find_candidates, Candidate, VetoReason, VetoStatus};
pub use injection::{inject_and_recover, inject_and_recover_many, inject_tone, inject_tones, recoveries, Recovery};
pub use limits::{exclusion_curve, ExclusionCurve, Provenance};
pub use pipeline::{analyze, Analysis, AnalysisConfig};
pub use response::{
    analytic_bin_response, calibrate_bin_response, field_calibration, hann_scalloping, sensor_gains, BinResponse,
    FieldCalibration,
};
pub use snr::{snr_asymmetry_stats, snr_of_values, snr_spectrum, AsymmetryStats, SnrSpectrum, MAD_TO_SIGMA, MIN_WINDOW_BINS};
pub use threshold::{
    mc_threshold, NoiseModel, Threshold, ThresholdMode, DEFAULT_BLOCK_BINS, MIN_TRIALS, NOISE_BAND_QUANTILE,
};
pub use veto::{veto_candidates, VetoData, VetoPolicy};
