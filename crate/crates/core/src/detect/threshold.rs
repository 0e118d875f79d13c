use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::snr::{median_in_place, snr_of_values, MAD_TO_SIGMA};
use crate::correlator::{FrequencyGrid, SpectraBundle, Subset, Window};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Bins per frequency block sharing one set of sensor PSDs.
pub const DEFAULT_BLOCK_BINS: usize = 8192;

/// Bins whose SNR is kept from each simulated trial.
const TRIAL_CORE_BINS: usize = 256;

/// Quantile of |SNR| reported as the noise-only band.
pub const NOISE_BAND_QUANTILE: f64 = 0.99;

/// Fewest simulated values required beyond the requested quantile.
const MIN_TAIL_SAMPLES: f64 = 20.0;

pub const MIN_TRIALS: usize = 100;

/// Independent-sensor noise model for simulating the averaged spectrum and
/// its SNR directly in the frequency domain.
///
/// Every sensor contributes circular Gaussian Fourier amplitudes with its
/// measured PSD, correlated between neighbouring bins as the analysis
/// window dictates and between consecutive segments by the window overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub grid: FrequencyGrid,
    /// Station index of each sensor.
    pub station_of: Vec<usize>,
    pub block_bins: usize,
    /// `block_psd[block][sensor]`, T^2/Hz.
    pub block_psd: Vec<Vec<f64>>,
    pub subset: Subset,
    pub n_segments: usize,
    pub segment_correlation: f64,
    pub window: Window,
    pub window_bins: usize,
}

impl NoiseModel {
    /// Build the model from measured auto-spectra: each block uses the
    /// median PSD of every sensor over that block.
    pub fn from_bundle(bundle: &SpectraBundle, subset: Subset, window_bins: usize) -> Result<Self> {
        Self::from_bundle_with_blocks(bundle, subset, window_bins, DEFAULT_BLOCK_BINS)
    }

    pub fn from_bundle_with_blocks(
        bundle: &SpectraBundle,
        subset: Subset,
        window_bins: usize,
        block_bins: usize,
    ) -> Result<Self> {
        if block_bins == 0 {
            return Err(Error::InvalidConfig("block_bins must be positive".into()));
        }
        let mut stations: Vec<&str> = Vec::new();
        let station_of = bundle
            .sensors
            .iter()
            .map(|s| match stations.iter().position(|x| *x == s.station_id) {
                Some(i) => i,
                None => {
                    stations.push(&s.station_id);
                    stations.len() - 1
                }
            })
            .collect();
        let n = bundle.grid.len;
        let block_psd = (0..n.div_ceil(block_bins))
            .map(|b| {
                let range = b * block_bins..((b + 1) * block_bins).min(n);
                bundle
                    .autos
                    .iter()
                    .map(|a| {
                        let mut v: Vec<f64> = a.values[range.clone()].iter().map(|c| c.re).collect();
                        median_in_place(&mut v)
                    })
                    .collect()
            })
            .collect();
        let model = Self {
            grid: bundle.grid,
            station_of,
            block_bins,
            block_psd,
            subset,
            n_segments: bundle.n_segments,
            segment_correlation: bundle.segment_correlation,
            window: bundle.window,
            window_bins,
        };
        model.check()?;
        Ok(model)
    }

    /// Identical unit-PSD sensors; `sensors_per_station[s]` sensors in
    /// station `s`.
    pub fn white(
        sensors_per_station: &[usize],
        grid: FrequencyGrid,
        n_segments: usize,
        segment_correlation: f64,
        window: Window,
        subset: Subset,
        window_bins: usize,
    ) -> Result<Self> {
        let station_of: Vec<usize> = sensors_per_station
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| std::iter::repeat_n(s, n))
            .collect();
        let model = Self {
            grid,
            block_bins: grid.len.max(1),
            block_psd: vec![vec![1.0; station_of.len()]],
            station_of,
            subset,
            n_segments,
            segment_correlation,
            window,
            window_bins,
        };
        model.check()?;
        Ok(model)
    }

    pub fn n_pairs(&self) -> usize {
        let n = self.station_of.len();
        let same: usize = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.station_of[i] == self.station_of[j])
            .count();
        let all = n * n.saturating_sub(1) / 2;
        match self.subset {
            Subset::All => all,
            Subset::SameStationOnly => same,
            Subset::CrossStationOnly => all - same,
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_pairs() == 0 {
            return Err(Error::EmptySubset(format!(
                "noise model has no {} pairs",
                self.subset.label()
            )));
        }
        if self.n_segments == 0 {
            return Err(Error::InvalidConfig("noise model needs at least one segment".into()));
        }
        if !(0.0..1.0).contains(&self.segment_correlation) {
            return Err(Error::InvalidConfig("segment correlation must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn n_stations(&self) -> usize {
        self.station_of.iter().max().map_or(0, |m| m + 1)
    }

    /// SNR values of the central bins of one simulated stretch of spectrum.
    fn simulate_trial(&self, block: usize, key: &StreamKey, core: usize) -> Result<Vec<f64>> {
        let half = self.window_bins / 2;
        let len = core + 2 * half;
        // One extra bin either side feeds the window kernel.
        let padded = len + 2;
        let n_sensors = self.station_of.len();
        let n_stations = self.n_stations();
        let psd = &self.block_psd[block];
        let r = self.segment_correlation;
        let innovation = (1.0 - r * r).sqrt();
        let mut rng = key.block_rng(0);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        };

        let mut state = vec![Complex64::default(); n_sensors * padded];
        let mut acc = vec![0.0; len];
        let mut total = vec![Complex64::default(); len];
        let mut station_sum = vec![Complex64::default(); n_stations * len];
        let mut power_all = vec![0.0; len];
        let mut power_station = vec![0.0; n_stations * len];
        let hann_norm = 1.0 / 0.375f64.sqrt();

        for s in 0..self.n_segments {
            total.fill(Complex64::default());
            station_sum.fill(Complex64::default());
            power_all.fill(0.0);
            power_station.fill(0.0);
            for i in 0..n_sensors {
                let a = &mut state[i * padded..(i + 1) * padded];
                for v in a.iter_mut() {
                    let e = draw(&mut rng);
                    *v = if s == 0 { e } else { r * *v + innovation * e };
                }
                let amp = psd[i].max(0.0).sqrt();
                let st = self.station_of[i];
                for k in 0..len {
                    let x = match self.window {
                        Window::Hann => {
                            (a[k + 1] * 0.5 - (a[k] + a[k + 2]) * 0.25) * (hann_norm * amp)
                        }
                        Window::Rectangular => a[k + 1] * amp,
                    };
                    let p = x.norm_sqr();
                    total[k] += x;
                    station_sum[st * len + k] += x;
                    power_all[k] += p;
                    power_station[st * len + k] += p;
                }
            }
            for k in 0..len {
                // Sum of Re(X_i conj X_j) over i < j, by subset.
                let all = 0.5 * (total[k].norm_sqr() - power_all[k]);
                let same: f64 = (0..n_stations)
                    .map(|st| 0.5 * (station_sum[st * len + k].norm_sqr() - power_station[st * len + k]))
                    .sum();
                acc[k] += match self.subset {
                    Subset::All => all,
                    Subset::SameStationOnly => same,
                    Subset::CrossStationOnly => all - same,
                };
            }
        }
        let scale = 1.0 / (self.n_segments * self.n_pairs()) as f64;
        for v in acc.iter_mut() {
            *v *= scale;
        }
        let grid = FrequencyGrid {
            first_bin: 1,
            df: 1.0,
            len,
        };
        let snr = snr_of_values(grid, &acc, self.window_bins)?;
        Ok(snr.snr[half..half + core].to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Each bin is tested at the requested confidence on its own.
    #[default]
    PerBin,
    /// The largest noise-only SNR anywhere in the band stays below the
    /// threshold with the requested confidence.
    Global,
}

/// SNR detection threshold, piecewise constant over frequency blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub cl: f64,
    pub mode: ThresholdMode,
    pub block_bins: usize,
    pub per_bin: Vec<f64>,
    pub global: Vec<f64>,
    /// Noise-only |SNR| quantile at [`NOISE_BAND_QUANTILE`].
    pub noise_band: f64,
    pub n_trials: usize,
    pub method: String,
}

impl Threshold {
    /// A flat threshold, e.g. for tests or externally supplied values.
    pub fn constant(value: f64, cl: f64) -> Self {
        Self {
            cl,
            mode: ThresholdMode::PerBin,
            block_bins: usize::MAX,
            per_bin: vec![value],
            global: vec![value],
            noise_band: value,
            n_trials: 0,
            method: format!("constant {value}"),
        }
    }

    pub fn with_mode(mut self, mode: ThresholdMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn at(&self, bin: usize) -> f64 {
        let values = match self.mode {
            ThresholdMode::PerBin => &self.per_bin,
            ThresholdMode::Global => &self.global,
        };
        values[(bin / self.block_bins).min(values.len() - 1)]
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

/// Monte-Carlo SNR threshold exceeded by a noise-only bin with probability
/// `1 - cl`. Trial `t` of block `b` uses its own keyed stream, so results do
/// not depend on scheduling.
pub fn mc_threshold(model: &NoiseModel, n_trials: usize, cl: f64, seed: u64) -> Result<Threshold> {
    if !(cl > 0.0 && cl < 1.0) {
        return Err(Error::Domain(format!("confidence level must be in (0, 1), got {cl}")));
    }
    if n_trials < MIN_TRIALS {
        return Err(Error::InsufficientTrials(format!(
            "{n_trials} trials requested, at least {MIN_TRIALS} required"
        )));
    }
    let core = TRIAL_CORE_BINS.min(model.grid.len.max(1));
    let pooled = (n_trials * core) as f64;
    if pooled * (1.0 - cl) < MIN_TAIL_SAMPLES {
        return Err(Error::InsufficientTrials(format!(
            "{n_trials} trials give {:.1} samples beyond the {cl} quantile; need {MIN_TAIL_SAMPLES}",
            pooled * (1.0 - cl)
        )));
    }

    let n_blocks = model.block_psd.len();
    let jobs: Vec<(usize, usize)> =
        (0..n_blocks).flat_map(|b| (0..n_trials).map(move |t| (b, t))).collect();
    let results: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(b, t)| {
            let key = StreamKey::new(seed, &["mc-threshold", &b.to_string(), &t.to_string()]);
            model.simulate_trial(b, &key, core)
        })
        .collect::<Result<_>>()?;

    let normal = Normal::standard();
    let n_bins = model.grid.len.max(1) as f64;
    // Sidak: per-bin exceedance giving probability 1 - cl for the maximum.
    let per_bin_tail = -(cl.ln() / n_bins).exp_m1();
    let z_global = normal.inverse_cdf(1.0 - per_bin_tail);

    let mut per_bin = Vec::with_capacity(n_blocks);
    let mut global = Vec::with_capacity(n_blocks);
    let mut magnitudes = Vec::with_capacity(results.len() * core);
    for block in results.chunks(n_trials) {
        let mut values: Vec<f64> = block.iter().flatten().copied().collect();
        values.sort_by(f64::total_cmp);
        per_bin.push(quantile(&values, cl));
        // The far tail is beyond the trials; extrapolate with the robust
        // Gaussian width of the simulated SNR.
        let med = quantile(&values, 0.5);
        let mut dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
        let width = MAD_TO_SIGMA * median_in_place(&mut dev);
        global.push(med + width * z_global);
        magnitudes.extend(values.iter().map(|v| v.abs()));
    }
    magnitudes.sort_by(f64::total_cmp);

    Ok(Threshold {
        cl,
        mode: ThresholdMode::PerBin,
        block_bins: model.block_bins,
        per_bin,
        global,
        noise_band: quantile(&magnitudes, NOISE_BAND_QUANTILE),
        n_trials,
        method: format!(
            "monte-carlo: {n_trials} trials x {n_blocks} blocks, {} pairs ({}), window {} bins, seed {seed}",
            model.n_pairs(),
            model.subset.label(),
            model.window_bins
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(window_bins: usize, subset: Subset) -> NoiseModel {
        let grid = FrequencyGrid {
            first_bin: 100,
            df: 0.01,
            len: 49_900,
        };
        NoiseModel::white(&[2, 13], grid, 39, 1.0 / 6.0, Window::Hann, subset, window_bins).unwrap()
    }

    #[test]
    fn gaussian_regime_approaches_normal_quantile() {
        // A wide noise window makes the local sigma nearly exact, and the
        // bipartite cross-station graph has no triangles, so no skew.
        let t = mc_threshold(&model(1024, Subset::CrossStationOnly), 100, 0.95, 1).unwrap();
        assert!((t.at(0) - 1.645).abs() < 0.05, "{}", t.at(0));
    }

    #[test]
    fn all_pair_average_is_skewed_by_sensor_triangles() {
        // sum_{i<j} Re X_i X_j* = (|sum X|^2 - sum |X|^2) / 2 is dominated by
        // a 78-dof chi-square: Cornish-Fisher puts the 95% point near 1.745.
        let t = mc_threshold(&model(1024, Subset::All), 100, 0.95, 1).unwrap();
        assert!((t.at(0) - 1.745).abs() < 0.05, "{}", t.at(0));
    }

    #[test]
    fn median_threshold_is_near_zero() {
        let t = mc_threshold(&model(64, Subset::CrossStationOnly), 100, 0.5, 2).unwrap();
        assert!(t.at(0).abs() < 0.03, "{}", t.at(0));
        assert!(t.noise_band > 2.3 && t.noise_band < 3.0, "{}", t.noise_band);
    }

    #[test]
    fn global_mode_is_stricter() {
        let t = mc_threshold(&model(64, Subset::All), 100, 0.95, 3).unwrap();
        let g = t.clone().with_mode(ThresholdMode::Global);
        assert!(g.at(0) > 4.0 && g.at(0) > t.at(0) + 2.0, "{}", g.at(0));
    }

    #[test]
    fn trial_count_and_cl_are_validated() {
        let m = model(64, Subset::All);
        assert!(matches!(mc_threshold(&m, 99, 0.95, 0), Err(Error::InsufficientTrials(_))));
        assert!(matches!(mc_threshold(&m, 100, 0.9999, 0), Err(Error::InsufficientTrials(_))));
        assert!(mc_threshold(&m, 100, 1.0, 0).is_err());
        assert!(mc_threshold(&m, 100, 0.0, 0).is_err());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let m = model(64, Subset::CrossStationOnly);
        assert_eq!(mc_threshold(&m, 100, 0.95, 9).unwrap(), mc_threshold(&m, 100, 0.95, 9).unwrap());
    }

    #[test]
    fn single_station_has_no_cross_pairs() {
        let grid = FrequencyGrid {
            first_bin: 1,
            df: 1.0,
            len: 100,
        };
        assert!(matches!(
            NoiseModel::white(&[3], grid, 5, 0.0, Window::Hann, Subset::CrossStationOnly, 64),
            Err(Error::EmptySubset(_))
        ));
    }
}
