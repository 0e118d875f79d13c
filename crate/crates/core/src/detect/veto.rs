use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::candidates::{Candidate, VetoReason, VetoStatus};
use super::snr::{local_median, local_median_with, snr_of_values, SnrSpectrum};
use super::threshold::Threshold;
use crate::correlator::{spectra_bundle, SpectraBundle, SpectralConfig, Subset, Weighting};
use crate::error::{Error, Result};
use crate::simnet::RunData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VetoPolicy {
    pub half_run: bool,
    pub cross_station: bool,
    pub uniformity: bool,
    /// Known technical-line frequencies, Hz.
    pub technical_lines: Vec<f64>,
    /// A candidate within this distance of a listed line is rejected, Hz.
    pub line_width: f64,
    /// Allowed field-amplitude ratio between the cross-station and the
    /// all-pair averages.
    pub cross_amplitude_factor: f64,
    /// Per-pair consistency bound, in standard deviations.
    pub uniformity_sigma: f64,
}

impl Default for VetoPolicy {
    fn default() -> Self {
        Self {
            half_run: true,
            cross_station: true,
            uniformity: true,
            technical_lines: Vec::new(),
            line_width: 0.05,
            cross_amplitude_factor: 3.0,
            uniformity_sigma: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
struct SubsetView {
    mean: Vec<f64>,
    snr: Vec<f64>,
    gain_sq: f64,
}

/// Everything the veto battery needs beyond the full-run spectra, computed
/// once per run.
#[derive(Debug, Clone)]
pub struct VetoData {
    halves: Option<[SnrSpectrum; 2]>,
    all: SubsetView,
    cross: Option<SubsetView>,
    /// Relative signal gain of each sensor, in bundle order.
    gains: Vec<f64>,
    window_bins: usize,
}

fn view(bundle: &SpectraBundle, gains: &[f64], subset: Subset, window_bins: usize) -> Result<SubsetView> {
    let avg = bundle.average(subset, Weighting::Uniform)?;
    let snr = snr_of_values(avg.grid, &avg.mean_real, window_bins)?;
    let (mut total, mut n) = (0.0, 0usize);
    for (p, &(i, j)) in bundle.pairs.iter().zip(&bundle.pair_index) {
        if subset.admits(p) {
            total += gains[i] * gains[j];
            n += 1;
        }
    }
    Ok(SubsetView {
        mean: avg.mean_real,
        snr: snr.snr,
        gain_sq: total / n as f64,
    })
}

impl VetoData {
    /// `subset` and `weighting` are those of the detection average; the
    /// half-run test repeats that average on each half of the run.
    #[allow(clippy::too_many_arguments)]
    pub fn prepare(
        run: &RunData,
        bundle: &SpectraBundle,
        gains: &[f64],
        spectral: &SpectralConfig,
        subset: Subset,
        weighting: Weighting,
        window_bins: usize,
        policy: &VetoPolicy,
    ) -> Result<Self> {
        if gains.len() != bundle.sensors.len() {
            return Err(Error::InvalidConfig("one gain per sensor required".into()));
        }
        let halves = if policy.half_run {
            let n = run.records.first().map_or(0, |r| r.samples.len());
            if n / 2 < spectral.segment_length {
                return Err(Error::TooShort {
                    len: n,
                    min: 2 * spectral.segment_length,
                });
            }
            let mut out = Vec::with_capacity(2);
            for (from, to) in [(0, n / 2), (n / 2, n)] {
                let half = spectra_bundle(&run.slice(from, to), spectral)?;
                let avg = half.average(subset, weighting)?;
                out.push(snr_of_values(avg.grid, &avg.mean_real, window_bins)?);
            }
            let second = out.pop().expect("two halves");
            let first = out.pop().expect("two halves");
            Some([first, second])
        } else {
            None
        };
        let has_cross = bundle.pairs.iter().any(|p| !p.same_station);
        Ok(Self {
            halves,
            all: view(bundle, gains, Subset::All, window_bins)?,
            cross: if has_cross {
                Some(view(bundle, gains, Subset::CrossStationOnly, window_bins)?)
            } else {
                None
            },
            gains: gains.to_vec(),
            window_bins,
        })
    }
}

/// Two-sided tail probability below which a consistency test fails.
fn tail_probability(n_sigma: f64) -> f64 {
    Normal::standard().cdf(-n_sigma)
}

fn half_run_ok(data: &VetoData, k: usize, threshold: f64) -> Option<bool> {
    let halves = data.halves.as_ref()?;
    let bar = threshold / std::f64::consts::SQRT_2;
    Some(halves.iter().all(|h| h.snr[k] > bar))
}

fn cross_station_ok(data: &VetoData, k: usize, factor: f64, buf: &mut Vec<f64>) -> Option<bool> {
    let cross = data.cross.as_ref()?;
    let half = data.window_bins / 2;
    let excess = |v: &SubsetView, buf: &mut Vec<f64>| {
        (v.mean[k] - local_median(&v.mean, k, half, buf)) / v.gain_sq
    };
    let a_cross = excess(cross, buf);
    let a_all = excess(&data.all, buf);
    if !(cross.snr[k] > 0.0 && a_cross > 0.0 && a_all > 0.0) {
        return Some(false);
    }
    let ratio = (a_cross / a_all).sqrt();
    Some(ratio <= factor && ratio >= 1.0 / factor)
}

/// Fit one common field to every pair and auto spectrum at bin `k` and
/// check each against its expected scatter.
fn uniformity_ok(data: &VetoData, bundle: &SpectraBundle, k: usize, n_sigma: f64, buf: &mut Vec<f64>) -> bool {
    let half = data.window_bins / 2;
    let k_eff = bundle.effective_segments;
    // Local medians are themselves noisy; inflate the variance accordingly.
    let inflation = 1.0 + std::f64::consts::FRAC_PI_2 / (2 * half) as f64;
    let noise: Vec<f64> = bundle
        .autos
        .iter()
        .map(|a| local_median_with(a.values.len(), k, half, |i| a.values[i].re, buf))
        .collect();
    let auto_excess: Vec<f64> = bundle
        .autos
        .iter()
        .zip(&noise)
        .map(|(a, n)| a.values[k].re - n)
        .collect();
    let pair_rows: Vec<(usize, usize, f64, f64)> = bundle
        .pairs
        .iter()
        .zip(&bundle.pair_index)
        .map(|(p, &(i, j))| {
            let c = local_median_with(p.values.len(), k, half, |i| p.values[i].re, buf);
            (i, j, c, p.values[k].re - c)
        })
        .collect();

    let g = &data.gains;
    let pair_var = |i: usize, j: usize, c: f64, amp: f64| {
        let (ai, aj) = (g[i] * g[i] * amp, g[j] * g[j] * amp);
        let (ni, nj) = (noise[i], noise[j]);
        inflation * (ni * nj + c * c + ai * nj + aj * ni + 2.0 * (ai * aj).sqrt() * c) / (2.0 * k_eff)
    };
    let auto_var = |i: usize, amp: f64| {
        let a = g[i] * g[i] * amp;
        inflation * (noise[i] * noise[i] + 2.0 * a * noise[i]) / k_eff
    };

    let mut amp = 0.0f64;
    for _ in 0..4 {
        let a = amp.max(0.0);
        let (mut num, mut den) = (0.0, 0.0);
        for &(i, j, c, y) in &pair_rows {
            let v = pair_var(i, j, c, a);
            if v > 0.0 {
                let gp = g[i] * g[j];
                num += gp * y / v;
                den += gp * gp / v;
            }
        }
        for (i, &y) in auto_excess.iter().enumerate() {
            let v = auto_var(i, a);
            if v > 0.0 {
                let gp = g[i] * g[i];
                num += gp * y / v;
                den += gp * gp / v;
            }
        }
        if den == 0.0 {
            break;
        }
        amp = num / den;
    }
    let a = amp.max(0.0);

    let p_min = tail_probability(n_sigma);
    for &(i, j, c, y) in &pair_rows {
        let v = pair_var(i, j, c, a);
        let r = y - g[i] * g[j] * amp;
        if v > 0.0 {
            if r.abs() > n_sigma * v.sqrt() {
                return false;
            }
        } else if r != 0.0 {
            return false;
        }
    }
    // Auto spectra are scaled chi-square variables; test their tails exactly.
    let dof = 2.0 * k_eff;
    let Ok(chi) = ChiSquared::new(dof) else {
        return true;
    };
    for (i, a_row) in bundle.autos.iter().enumerate() {
        let expected = noise[i] + g[i] * g[i] * a;
        let observed = a_row.values[k].re;
        if expected > 0.0 {
            let x = dof * observed / expected;
            if chi.cdf(x) < p_min || chi.sf(x) < p_min {
                return false;
            }
        } else if observed != 0.0 {
            return false;
        }
    }
    true
}

/// Apply the veto battery to each candidate and set its final status.
pub fn veto_candidates(
    candidates: &[Candidate],
    data: &VetoData,
    bundle: &SpectraBundle,
    policy: &VetoPolicy,
    threshold: &Threshold,
) -> Vec<Candidate> {
    let mut buf = Vec::with_capacity(data.window_bins + 1);
    candidates
        .iter()
        .map(|c| {
            let mut out = c.clone();
            out.reasons.clear();
            let k = c.bin;
            if policy.half_run && half_run_ok(data, k, threshold.at(k)) == Some(false) {
                out.reasons.push(VetoReason::HalfRunInconsistent);
            }
            if policy.cross_station
                && cross_station_ok(data, k, policy.cross_amplitude_factor, &mut buf) == Some(false)
            {
                out.reasons.push(VetoReason::CrossStationAbsent);
            }
            if policy.uniformity && !uniformity_ok(data, bundle, k, policy.uniformity_sigma, &mut buf) {
                out.reasons.push(VetoReason::PairAmplitudeNonuniform);
            }
            if policy
                .technical_lines
                .iter()
                .any(|&f| (f - c.frequency).abs() <= policy.line_width)
            {
                out.reasons.push(VetoReason::KnownTechnicalLine);
            }
            out.veto_status = if out.reasons.is_empty() {
                VetoStatus::Passed
            } else {
                VetoStatus::Rejected
            };
            out
        })
        .collect()
}
