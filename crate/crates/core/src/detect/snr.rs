use serde::{Deserialize, Serialize};

use crate::correlator::{AveragedSpectrum, FrequencyGrid};
use crate::error::{Error, Result};

/// Converts a median absolute deviation to a Gaussian standard deviation.
pub const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

/// Smallest accepted local-noise window.
pub const MIN_WINDOW_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSpectrum {
    pub grid: FrequencyGrid,
    pub snr: Vec<f64>,
    /// Robust local standard deviation used for each bin, T^2/Hz.
    pub sigma: Vec<f64>,
    pub mean_real: Vec<f64>,
    pub window_bins: usize,
}

impl SnrSpectrum {
    pub fn frequencies(&self) -> Vec<f64> {
        self.grid.frequencies()
    }
}

/// Fill `buf` with the neighbours of bin `k` within `half` bins on either
/// side, excluding `k` itself. Windows shrink at the band edges.
pub(crate) fn neighbours(values: &[f64], k: usize, half: usize, buf: &mut Vec<f64>) {
    buf.clear();
    let lo = k.saturating_sub(half);
    let hi = (k + half + 1).min(values.len());
    buf.extend_from_slice(&values[lo..k]);
    buf.extend_from_slice(&values[k + 1..hi]);
}

pub(crate) fn median_in_place(buf: &mut [f64]) -> f64 {
    if buf.is_empty() {
        return 0.0;
    }
    let n = buf.len();
    let mid = n / 2;
    let (lower, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    }
}

/// Local median of `values` around bin `k`, excluding `k`.
pub(crate) fn local_median(values: &[f64], k: usize, half: usize, buf: &mut Vec<f64>) -> f64 {
    neighbours(values, k, half, buf);
    median_in_place(buf)
}

/// [`local_median`] over values produced by `value(i)` for `i < len`.
pub(crate) fn local_median_with(
    len: usize,
    k: usize,
    half: usize,
    value: impl Fn(usize) -> f64,
    buf: &mut Vec<f64>,
) -> f64 {
    buf.clear();
    let lo = k.saturating_sub(half);
    let hi = (k + half + 1).min(len);
    buf.extend((lo..hi).filter(|&i| i != k).map(value));
    median_in_place(buf)
}

/// Gaussian-equivalent sigma from the MAD of the neighbours of `k`.
pub(crate) fn local_sigma(values: &[f64], k: usize, half: usize, buf: &mut Vec<f64>) -> f64 {
    neighbours(values, k, half, buf);
    let med = median_in_place(buf);
    for v in buf.iter_mut() {
        *v = (*v - med).abs();
    }
    let n = buf.len() as f64;
    MAD_TO_SIGMA * small_sample_factor(n) * median_in_place(buf)
}

/// Finite-sample consistency correction of the MAD, `n / (n - 0.8)`
/// (Croux and Rousseeuw).
pub(crate) fn small_sample_factor(n: f64) -> f64 {
    if n > 1.0 {
        n / (n - 0.8)
    } else {
        1.0
    }
}

/// Per-bin SNR of an arbitrary real spectrum on `grid`.
pub fn snr_of_values(grid: FrequencyGrid, values: &[f64], window_bins: usize) -> Result<SnrSpectrum> {
    if window_bins < MIN_WINDOW_BINS {
        return Err(Error::InvalidConfig(format!(
            "window_bins must be at least {MIN_WINDOW_BINS}, got {window_bins}"
        )));
    }
    if values.len() != grid.len {
        return Err(Error::Misaligned("spectrum length differs from its grid".into()));
    }
    let half = window_bins / 2;
    let mut buf = Vec::with_capacity(window_bins + 1);
    let mut snr = Vec::with_capacity(values.len());
    let mut sigma = Vec::with_capacity(values.len());
    for (k, &v) in values.iter().enumerate() {
        let s = local_sigma(values, k, half, &mut buf);
        sigma.push(s);
        snr.push(ratio(v, s));
    }
    Ok(SnrSpectrum {
        grid,
        snr,
        sigma,
        mean_real: values.to_vec(),
        window_bins,
    })
}

/// SNR with a zero-noise guard: a noiseless nonzero bin gets the largest
/// finite value of its sign.
pub(crate) fn ratio(value: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        value / sigma
    } else if value == 0.0 {
        0.0
    } else {
        f64::MAX.copysign(value)
    }
}

/// Mean real part over a robust local sigma estimated from the surrounding
/// `window_bins` bins.
pub fn snr_spectrum(avg: &AveragedSpectrum, window_bins: usize) -> Result<SnrSpectrum> {
    snr_of_values(avg.grid, &avg.mean_real, window_bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryStats {
    pub n_above: usize,
    pub n_below: usize,
    pub skewness: f64,
}

impl AsymmetryStats {
    /// `n_above / n_below`, infinite when nothing falls below.
    pub fn outlier_ratio(&self) -> f64 {
        self.n_above as f64 / self.n_below as f64
    }

    pub fn outliers(&self) -> usize {
        self.n_above + self.n_below
    }
}

/// Counts outside `±bound` and the sample skewness of the SNR values.
pub fn snr_asymmetry_stats(snr: &SnrSpectrum, bound: f64) -> Result<AsymmetryStats> {
    if !(bound > 0.0) {
        return Err(Error::Domain(format!("bound must be positive, got {bound}")));
    }
    Ok(AsymmetryStats {
        n_above: snr.snr.iter().filter(|&&s| s > bound).count(),
        n_below: snr.snr.iter().filter(|&&s| s < -bound).count(),
        skewness: skewness(&snr.snr),
    })
}

pub(crate) fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 3 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}
