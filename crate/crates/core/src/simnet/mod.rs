//! Synthetic magnetometer-network runs.
//!
//! Each sensor sees independent white noise, the common-mode noise of its
//! station's shield room, optional fixed-phase technical lines, and (when a
//! [`DpdmParams`] is present) a dark-photon tone that is identical in phase
//! across every station. All randomness comes from keyed counter-based
//! streams, so a record depends only on the seed and the sensor's identity.

mod check;
mod clock;
mod noise;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::physics::{self, DpdmParams, ShieldGeometry};
use crate::rng::StreamKey;

pub use check::{cross_asd_check, white_noise_asd_check, MIN_CHECK_SAMPLES};
pub use clock::apply_clock_error;
pub use noise::NoiseShape;

/// GPS time (ns) used when a spec does not set one: 2024-01-01T00:00:00 UTC.
pub const DEFAULT_START_GPS_NS: u64 = 1_388_102_418_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TechnicalLine {
    pub frequency: f64,
    /// Tesla, peak.
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub sensor_id: String,
    pub station_id: String,
    /// T/sqrt(Hz), one-sided.
    #[serde(default = "default_sensor_asd")]
    pub noise_asd: f64,
    #[serde(default = "one")]
    pub coupling_factor: f64,
    #[serde(default)]
    pub technical_lines: Vec<TechnicalLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationConfig {
    pub station_id: String,
    #[serde(default)]
    pub location_label: String,
    /// T/sqrt(Hz), shared by every sensor in the room.
    #[serde(default = "default_common_mode_asd")]
    pub common_mode_asd: f64,
    #[serde(default)]
    pub common_mode_shape: NoiseShape,
    /// Narrow-band disturbances seen by every sensor in the room.
    #[serde(default)]
    pub common_mode_lines: Vec<TechnicalLine>,
    #[serde(default)]
    pub shield: ShieldGeometry,
    /// Seconds; the station clock stamps samples this much late.
    #[serde(default)]
    pub clock_offset: f64,
    #[serde(default)]
    pub clock_jitter_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_time_gps_ns: u64,
    /// Highest frequency the run must resolve.
    #[serde(default = "default_max_frequency")]
    pub max_analysis_frequency: f64,
    pub stations: Vec<StationConfig>,
    pub sensors: Vec<SensorConfig>,
    #[serde(default)]
    pub dpdm: Option<DpdmParams>,
}

fn default_sensor_asd() -> f64 {
    15e-15
}
fn default_common_mode_asd() -> f64 {
    5e-15
}
fn one() -> f64 {
    1.0
}
fn default_duration() -> f64 {
    2000.0
}
fn default_sample_rate() -> f64 {
    1000.0
}
fn default_start() -> u64 {
    DEFAULT_START_GPS_NS
}
fn default_max_frequency() -> f64 {
    500.0
}

impl StationConfig {
    pub fn new(station_id: &str, location_label: &str) -> Self {
        Self {
            station_id: station_id.to_string(),
            location_label: location_label.to_string(),
            common_mode_asd: default_common_mode_asd(),
            common_mode_shape: NoiseShape::White,
            common_mode_lines: Vec::new(),
            shield: ShieldGeometry::default(),
            clock_offset: 0.0,
            clock_jitter_rms: 0.0,
        }
    }
}

impl SensorConfig {
    pub fn new(station_id: &str, sensor_id: &str) -> Self {
        Self {
            sensor_id: sensor_id.to_string(),
            station_id: station_id.to_string(),
            noise_asd: default_sensor_asd(),
            coupling_factor: 1.0,
            technical_lines: Vec::new(),
        }
    }
}

impl RunSpec {
    /// Thirteen sensors in the Suzhou room and two in Harbin, 2000 s at 1 kHz.
    pub fn two_station_default(seed: u64) -> Self {
        let stations = vec![
            StationConfig::new("harbin", "Harbin"),
            StationConfig::new("suzhou", "Suzhou"),
        ];
        let mut sensors: Vec<SensorConfig> = (1..=2)
            .map(|i| SensorConfig::new("harbin", &format!("hb{i:02}")))
            .collect();
        sensors.extend((1..=13).map(|i| SensorConfig::new("suzhou", &format!("sz{i:02}"))));
        Self {
            duration: default_duration(),
            sample_rate: default_sample_rate(),
            seed,
            start_time_gps_ns: DEFAULT_START_GPS_NS,
            max_analysis_frequency: default_max_frequency(),
            stations,
            sensors,
            dpdm: None,
        }
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn with_common_mode(mut self, asd: f64) -> Self {
        for station in &mut self.stations {
            station.common_mode_asd = asd;
        }
        self
    }

    pub fn with_sensor_noise(mut self, asd: f64) -> Self {
        for sensor in &mut self.sensors {
            sensor.noise_asd = asd;
        }
        self
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn station(&self, station_id: &str) -> Option<&StationConfig> {
        self.stations.iter().find(|s| s.station_id == station_id)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if self.sample_rate < 2.0 * self.max_analysis_frequency {
            return Err(Error::Nyquist {
                sample_rate: self.sample_rate,
                max_frequency: self.max_analysis_frequency,
            });
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidConfig("duration must be non-negative".into()));
        }
        let samples = self.duration * self.sample_rate;
        if (samples - samples.round()).abs() > 1e-6 {
            return Err(Error::InvalidConfig(format!(
                "duration x sample_rate = {samples} is not an integer"
            )));
        }
        let mut seen = BTreeSet::new();
        for station in &self.stations {
            if !seen.insert(station.station_id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate station {}",
                    station.station_id
                )));
            }
            if !(station.common_mode_asd >= 0.0) || !(station.clock_jitter_rms >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "station {}: noise and jitter must be non-negative",
                    station.station_id
                )));
            }
            if station.clock_offset.abs() >= 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "station {}: |clock_offset| must be below 1 s",
                    station.station_id
                )));
            }
            station.shield.validate()?;
        }
        let mut ids = BTreeSet::new();
        for sensor in &self.sensors {
            if self.station(&sensor.station_id).is_none() {
                return Err(Error::InvalidConfig(format!(
                    "sensor {} references unknown station {}",
                    sensor.sensor_id, sensor.station_id
                )));
            }
            if !ids.insert((sensor.station_id.as_str(), sensor.sensor_id.as_str())) {
                return Err(Error::DuplicateSensor {
                    station_id: sensor.station_id.clone(),
                    sensor_id: sensor.sensor_id.clone(),
                });
            }
            if !(sensor.noise_asd >= 0.0) || !sensor.noise_asd.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "sensor {}: noise_asd must be non-negative",
                    sensor.sensor_id
                )));
            }
            if !(sensor.coupling_factor > 0.0 && sensor.coupling_factor <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "sensor {}: coupling_factor outside (0, 1]",
                    sensor.sensor_id
                )));
            }
        }
        if let Some(dpdm) = &self.dpdm {
            dpdm.validate()?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding, hex encoded.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("RunSpec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// One sensor's GPS-stamped samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesRecord {
    pub sensor_id: String,
    pub station_id: String,
    pub start_time: u64,
    pub sample_rate: f64,
    pub samples: Vec<f64>,
}

impl TimeSeriesRecord {
    pub fn key(&self) -> SensorKey {
        SensorKey {
            station_id: self.station_id.clone(),
            sensor_id: self.sensor_id.clone(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn is_aligned_with(&self, other: &TimeSeriesRecord) -> bool {
        self.start_time == other.start_time
            && self.sample_rate == other.sample_rate
            && self.samples.len() == other.samples.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SensorKey {
    pub station_id: String,
    pub sensor_id: String,
}

impl std::fmt::Display for SensorKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.station_id, self.sensor_id)
    }
}

/// All records of one observation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunData {
    pub records: Vec<TimeSeriesRecord>,
}

impl RunData {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, station_id: &str, sensor_id: &str) -> Option<&TimeSeriesRecord> {
        self.records
            .iter()
            .find(|r| r.station_id == station_id && r.sensor_id == sensor_id)
    }

    /// True when every record shares start time, rate and length.
    pub fn is_aligned(&self) -> bool {
        match self.records.first() {
            None => true,
            Some(first) => self.records.iter().all(|r| r.is_aligned_with(first)),
        }
    }

    /// Records restricted to the sample range `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> RunData {
        let records = self
            .records
            .iter()
            .map(|r| {
                let offset_ns = (from as f64 * 1e9 / r.sample_rate).round() as u64;
                TimeSeriesRecord {
                    sensor_id: r.sensor_id.clone(),
                    station_id: r.station_id.clone(),
                    start_time: r.start_time + offset_ns,
                    sample_rate: r.sample_rate,
                    samples: r.samples[from.min(r.samples.len())..to.min(r.samples.len())]
                        .to_vec(),
                }
            })
            .collect();
        RunData { records }
    }
}

/// Phase-continuous `amplitude * cos(2 pi f t + phase)` added in place for
/// `t = t0 + n / rate`.
pub fn add_tone(samples: &mut [f64], rate: f64, t0: f64, frequency: f64, amplitude: f64, phase: f64) {
    if amplitude == 0.0 {
        return;
    }
    let cycles0 = (frequency * t0).rem_euclid(1.0);
    let per_sample = frequency / rate;
    for (n, s) in samples.iter_mut().enumerate() {
        let cycles = (cycles0 + per_sample * n as f64).rem_euclid(1.0);
        *s += amplitude * (2.0 * PI * cycles + phase).cos();
    }
}

/// Dark-photon tone amplitude (tesla) seen by a sensor.
pub fn dpdm_amplitude(dpdm: &DpdmParams, shield: &ShieldGeometry, coupling: f64) -> Result<f64> {
    let geom = shield.with_coupling(coupling);
    Ok(physics::wall_field_amplitude(dpdm.epsilon, dpdm.frequency, &geom)? * dpdm.amplitude_scale)
}

/// Generate one run. Sensor order follows `spec.sensors`.
pub fn generate_run(spec: &RunSpec) -> Result<RunData> {
    spec.validate()?;
    let n = spec.n_samples();
    let rate = spec.sample_rate;

    let common: Vec<(String, Vec<f64>)> = spec
        .stations
        .par_iter()
        .map(|station| {
            let key = StreamKey::new(spec.seed, &["common-mode", &station.station_id]);
            let mut stream =
                noise::shaped_noise(&key, n, rate, station.common_mode_asd, &station.common_mode_shape);
            for line in &station.common_mode_lines {
                add_tone(&mut stream, rate, 0.0, line.frequency, line.amplitude, line.phase);
            }
            (station.station_id.clone(), stream)
        })
        .collect();

    let records = spec
        .sensors
        .par_iter()
        .map(|sensor| -> Result<TimeSeriesRecord> {
            let station = spec.station(&sensor.station_id).expect("validated");
            let key = StreamKey::new(spec.seed, &["sensor", &sensor.station_id, &sensor.sensor_id]);
            let sigma = sensor.noise_asd * (rate / 2.0).sqrt();
            let mut samples = key.gaussian(n, sigma);
            let shared = &common
                .iter()
                .find(|(id, _)| *id == sensor.station_id)
                .expect("station stream")
                .1;
            for (s, c) in samples.iter_mut().zip(shared) {
                *s += c;
            }
            for line in &sensor.technical_lines {
                add_tone(&mut samples, rate, 0.0, line.frequency, line.amplitude, line.phase);
            }
            if let Some(dpdm) = &spec.dpdm {
                let amplitude = dpdm_amplitude(dpdm, &station.shield, sensor.coupling_factor)?;
                add_tone(&mut samples, rate, 0.0, dpdm.frequency, amplitude, dpdm.phase);
            }
            let record = TimeSeriesRecord {
                sensor_id: sensor.sensor_id.clone(),
                station_id: sensor.station_id.clone(),
                start_time: spec.start_time_gps_ns,
                sample_rate: rate,
                samples,
            };
            if station.clock_offset != 0.0 || station.clock_jitter_rms != 0.0 {
                apply_clock_error(&record, station.clock_offset, station.clock_jitter_rms, spec.seed)
            } else {
                Ok(record)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RunData { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> RunSpec {
        RunSpec::two_station_default(seed).with_duration(20.0)
    }

    #[test]
    fn default_topology_and_length() {
        let spec = RunSpec::two_station_default(1);
        assert_eq!(spec.sensors.len(), 15);
        assert_eq!(spec.n_samples(), 2_000_000);
        let run = generate_run(&small_spec(1)).unwrap();
        assert_eq!(run.len(), 15);
        assert!(run.records.iter().all(|r| r.samples.len() == 20_000));
        assert!(run.records.iter().all(|r| r.samples.iter().all(|x| x.is_finite())));
        assert!(run.is_aligned());
    }

    #[test]
    fn zero_duration_gives_empty_records() {
        let run = generate_run(&RunSpec::two_station_default(1).with_duration(0.0)).unwrap();
        assert_eq!(run.len(), 15);
        assert!(run.records.iter().all(|r| r.samples.is_empty()));
    }

    #[test]
    fn nyquist_and_duplicates_are_rejected() {
        let mut spec = small_spec(1);
        spec.sample_rate = 800.0;
        assert!(matches!(generate_run(&spec), Err(Error::Nyquist { .. })));

        let mut spec = small_spec(1);
        let dup = spec.sensors[3].clone();
        spec.sensors.push(dup);
        assert!(matches!(generate_run(&spec), Err(Error::DuplicateSensor { .. })));

        let mut spec = small_spec(1);
        spec.duration = 1.0005;
        assert!(matches!(generate_run(&spec), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn identical_spec_is_bitwise_identical() {
        let a = generate_run(&small_spec(42)).unwrap();
        let b = generate_run(&small_spec(42)).unwrap();
        assert_eq!(a, b);
        let c = generate_run(&small_spec(43)).unwrap();
        assert_ne!(a.records[0].samples, c.records[0].samples);
    }

    #[test]
    fn noiseless_tone_is_an_exact_sampled_cosine() {
        let mut spec = small_spec(3).with_sensor_noise(0.0).with_common_mode(0.0);
        spec.sensors[4].coupling_factor = 0.5;
        let dpdm = DpdmParams::new(250.25, 1e-5).unwrap().with_phase(0.3);
        spec.dpdm = Some(dpdm);
        let run = generate_run(&spec).unwrap();
        let amp = physics::wall_field_amplitude(1e-5, 250.25, &ShieldGeometry::default()).unwrap();
        let reference = &run.records[0].samples;
        for (n, x) in reference.iter().enumerate() {
            let t = n as f64 / 1000.0;
            let expected = amp * (2.0 * PI * 250.25 * t + 0.3).cos();
            assert!((x - expected).abs() < 1e-9 * amp, "n = {n}");
        }
        for (i, record) in run.records.iter().enumerate() {
            let ratio = if i == 4 { 0.5 } else { 1.0 };
            for (x, r) in record.samples.iter().zip(reference) {
                assert_eq!(*x, r * ratio);
            }
        }
    }

    #[test]
    fn station_streams_are_independent() {
        let spec = small_spec(5).with_sensor_noise(0.0).with_duration(200.0);
        let run = generate_run(&spec).unwrap();
        let a = &run.record("harbin", "hb01").unwrap().samples;
        let b = &run.record("suzhou", "sz01").unwrap().samples;
        let c = &run.record("suzhou", "sz07").unwrap().samples;
        let corr = |x: &[f64], y: &[f64]| {
            let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            let xx: f64 = x.iter().map(|a| a * a).sum();
            let yy: f64 = y.iter().map(|a| a * a).sum();
            xy / (xx * yy).sqrt()
        };
        let n = a.len() as f64;
        assert!(corr(a, b).abs() < 3.0 / n.sqrt());
        assert_eq!(b, c);
    }

    #[test]
    fn noise_variance_matches_asd() {
        let spec = small_spec(9).with_common_mode(0.0).with_duration(2000.0);
        let mut spec = spec;
        spec.sensors.truncate(2);
        let run = generate_run(&spec).unwrap();
        for r in &run.records {
            let var = r.samples.iter().map(|x| x * x).sum::<f64>() / r.samples.len() as f64;
            let expected = 15e-15f64.powi(2) * 500.0;
            assert!(((var - expected) / expected).abs() < 0.02);
        }
    }

    #[test]
    fn spec_hash_tracks_content() {
        let a = small_spec(1);
        let mut b = a.clone();
        assert_eq!(a.spec_hash(), b.spec_hash());
        b.seed = 2;
        assert_ne!(a.spec_hash(), b.spec_hash());
        let json = serde_json::to_string(&a).unwrap();
        let back: RunSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
