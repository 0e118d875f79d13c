use serde::{Deserialize, Serialize};

use super::engine::{compute_spectra, compute_spectra_tracked, CrossSpectrum, Segmentation, SubsetVariance};
use super::{FrequencyGrid, SpectralConfig, Window};
use crate::error::{Error, Result};
use crate::simnet::{RunData, SensorKey, TimeSeriesRecord};

/// Which correlators enter an average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    CrossStationOnly,
    SameStationOnly,
}

impl Subset {
    pub fn admits(self, spectrum: &CrossSpectrum) -> bool {
        match self {
            Subset::All => true,
            Subset::CrossStationOnly => !spectrum.same_station,
            Subset::SameStationOnly => spectrum.same_station,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::CrossStationOnly => "cross_station_only",
            Subset::SameStationOnly => "same_station_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    InverseVariance,
}

/// Bins per block when estimating band-local variances for weighting.
const WEIGHT_BLOCK: usize = 64;

/// Network average of the real parts of several cross spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedSpectrum {
    pub grid: FrequencyGrid,
    pub mean_real: Vec<f64>,
    /// Per-bin standard error of `mean_real`, T^2/Hz.
    pub bin_sigma: Vec<f64>,
    pub n_correlators: usize,
    pub subset_label: Subset,
    pub effective_segments: f64,
}

impl AveragedSpectrum {
    pub fn frequencies(&self) -> Vec<f64> {
        self.grid.frequencies()
    }
}

/// Every auto- and cross-spectrum of a run, with sensors in lexicographic
/// (station, sensor) order and pairs `(i, j)`, `i < j`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct SpectraBundle {
    pub sensors: Vec<SensorKey>,
    pub autos: Vec<CrossSpectrum>,
    pub pairs: Vec<CrossSpectrum>,
    pub pair_index: Vec<(usize, usize)>,
    pub grid: FrequencyGrid,
    pub n_segments: usize,
    pub effective_segments: f64,
    /// Amplitude correlation of a bin between consecutive segments.
    pub segment_correlation: f64,
    pub window: Window,
    pub subset_variance: SubsetVariance,
}

impl SpectraBundle {
    pub fn subset(&self, subset: Subset) -> Vec<&CrossSpectrum> {
        self.pairs.iter().filter(|s| subset.admits(s)).collect()
    }

    /// Network average over `subset`. With uniform weights the per-bin
    /// error comes from the scatter of the mean itself, so correlations
    /// between pairs are included.
    pub fn average(&self, subset: Subset, weighting: Weighting) -> Result<AveragedSpectrum> {
        let mut avg = average_refs(&self.subset(subset), subset, weighting)?;
        if weighting == Weighting::Uniform {
            let var = match subset {
                Subset::All => Some(&self.subset_variance.all),
                Subset::SameStationOnly => self.subset_variance.same_station.as_ref(),
                Subset::CrossStationOnly => self.subset_variance.cross_station.as_ref(),
            };
            if let Some(var) = var {
                avg.bin_sigma = var.iter().map(|v| v.sqrt()).collect();
            }
        }
        Ok(avg)
    }

    pub fn sensor_index(&self, key: &SensorKey) -> Option<usize> {
        self.sensors.iter().position(|s| s == key)
    }
}

fn sorted_records(run: &RunData) -> Vec<&TimeSeriesRecord> {
    let mut records: Vec<&TimeSeriesRecord> = run.records.iter().collect();
    records.sort_by_key(|r| r.key());
    records
}

fn lexicographic_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// All C(n, 2) pair spectra of a run in lexicographic pair order.
pub fn all_pair_spectra(run: &RunData, cfg: &SpectralConfig) -> Result<Vec<CrossSpectrum>> {
    let records = sorted_records(run);
    if records.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 sensors for pair spectra, got {}",
            records.len()
        )));
    }
    let pairs = lexicographic_pairs(records.len());
    Ok(compute_spectra(&records, &pairs, false, cfg)?.1)
}

/// Pair spectra plus auto-spectra in one pass over the data.
pub fn spectra_bundle(run: &RunData, cfg: &SpectralConfig) -> Result<SpectraBundle> {
    let records = sorted_records(run);
    if records.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 sensors for pair spectra, got {}",
            records.len()
        )));
    }
    let seg = Segmentation::new(cfg, records[0].sample_rate, records[0].samples.len())?;
    let pair_index = lexicographic_pairs(records.len());
    let (autos, pairs, subset_variance) = compute_spectra_tracked(&records, &pair_index, true, true, cfg)?;
    Ok(SpectraBundle {
        sensors: records.iter().map(|r| r.key()).collect(),
        autos,
        pairs,
        pair_index,
        grid: seg.grid,
        n_segments: seg.n_segments,
        effective_segments: seg.effective_segments(),
        segment_correlation: seg.adjacent_correlation(),
        window: cfg.window,
        subset_variance: subset_variance.expect("at least one pair"),
    })
}

fn block_median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

fn average_refs(
    spectra: &[&CrossSpectrum],
    subset: Subset,
    weighting: Weighting,
) -> Result<AveragedSpectrum> {
    let Some(first) = spectra.first() else {
        return Err(Error::EmptySubset(format!("no correlators in subset {}", subset.label())));
    };
    if spectra.iter().any(|s| s.grid != first.grid) {
        return Err(Error::Misaligned("spectra have different frequency grids".into()));
    }
    let nb = first.grid.len;
    let mut mean_real = vec![0.0; nb];
    let mut variance = vec![0.0; nb];

    match weighting {
        Weighting::Uniform => {
            let w = 1.0 / spectra.len() as f64;
            for s in spectra {
                for k in 0..nb {
                    mean_real[k] += w * s.values[k].re;
                    variance[k] += w * w * s.re_var[k];
                }
            }
        }
        Weighting::InverseVariance => {
            for start in (0..nb).step_by(WEIGHT_BLOCK) {
                let end = (start + WEIGHT_BLOCK).min(nb);
                let local: Vec<f64> =
                    spectra.iter().map(|s| block_median(&s.re_var[start..end])).collect();
                let raw: Vec<f64> = if local.iter().all(|v| *v > 0.0) {
                    local.iter().map(|v| 1.0 / v).collect()
                } else {
                    vec![1.0; spectra.len()]
                };
                let total: f64 = raw.iter().sum();
                for (s, r) in spectra.iter().zip(&raw) {
                    let w = r / total;
                    for k in start..end {
                        mean_real[k] += w * s.values[k].re;
                        variance[k] += w * w * s.re_var[k];
                    }
                }
            }
        }
    }

    Ok(AveragedSpectrum {
        grid: first.grid,
        mean_real,
        bin_sigma: variance.into_iter().map(f64::sqrt).collect(),
        n_correlators: spectra.len(),
        subset_label: subset,
        effective_segments: first.effective_segments,
    })
}

/// Average the spectra admitted by `subset`.
pub fn network_average(
    spectra: &[CrossSpectrum],
    subset: Subset,
    weighting: Weighting,
) -> Result<AveragedSpectrum> {
    let refs: Vec<&CrossSpectrum> = spectra.iter().filter(|s| subset.admits(s)).collect();
    average_refs(&refs, subset, weighting)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub n: usize,
    /// Amplitude spectral density equivalent of the averaged spectrum's
    /// per-bin standard error, T/sqrt(Hz).
    pub asd: f64,
}

/// Network field sensitivity at `reference_frequency` as correlators are
/// added one by one in the given order (uniform weights).
///
/// A single pair of sensors with white ASDs `S` has a per-bin standard error
/// `S^2 / sqrt(2 K_eff)` after `K_eff` effective segments; the sensitivity
/// undoes that averaging gain so one correlator reports the sensor ASD.
pub fn sensitivity_curve(
    spectra: &[CrossSpectrum],
    reference_frequency: f64,
) -> Result<Vec<SensitivityPoint>> {
    let Some(first) = spectra.first() else {
        return Err(Error::EmptySubset("no spectra for sensitivity curve".into()));
    };
    let k = first.grid.index_of(reference_frequency).ok_or_else(|| {
        Error::Domain(format!("reference frequency {reference_frequency} Hz outside band"))
    })?;
    let dof = (2.0 * first.effective_segments).sqrt();
    let mut cumulative = 0.0;
    Ok(spectra
        .iter()
        .enumerate()
        .map(|(i, s)| {
            cumulative += s.re_var[k];
            let n = i + 1;
            let sigma = cumulative.sqrt() / n as f64;
            SensitivityPoint {
                n,
                asd: (sigma * dof).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub prefactor: f64,
    /// `a` in `value = prefactor * n^(-a)`.
    pub exponent: f64,
    /// RMS residual in natural-log units.
    pub residual_rms: f64,
}

/// Least-squares fit of `ln value = ln c - a ln n`.
pub fn fit_power_law(points: &[SensitivityPoint]) -> Result<PowerLawFit> {
    if points.len() < 5 {
        return Err(Error::Fit(format!("need at least 5 points, got {}", points.len())));
    }
    if let Some(bad) = points.iter().find(|p| !(p.asd > 0.0) || p.n == 0) {
        return Err(Error::Fit(format!("non-positive value at n = {}", bad.n)));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.asd.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all points share one n".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Ok(PowerLawFit {
        prefactor: intercept.exp(),
        exponent: -slope,
        residual_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::{generate_run, RunSpec};

    fn quick_cfg() -> SpectralConfig {
        SpectralConfig {
            segment_length: 10_000,
            overlap_fraction: 0.5,
            window: Window::Hann,
            band: [1.0, 500.0],
        }
    }

    fn quick_run(seed: u64, duration: f64, common_mode: f64) -> RunData {
        generate_run(
            &RunSpec::two_station_default(seed)
                .with_duration(duration)
                .with_common_mode(common_mode),
        )
        .unwrap()
    }

    #[test]
    fn pair_counts_for_two_station_topology() {
        let run = quick_run(1, 20.0, 5e-15);
        let spectra = all_pair_spectra(&run, &quick_cfg()).unwrap();
        assert_eq!(spectra.len(), 105);
        assert_eq!(spectra.iter().filter(|s| !s.same_station).count(), 26);
        assert_eq!(spectra.iter().filter(|s| s.same_station).count(), 79);
        // Lexicographic order of (station, sensor) keys.
        assert_eq!(spectra[0].a.sensor_id, "hb01");
        assert_eq!(spectra[0].b.sensor_id, "hb02");
        assert_eq!(spectra[1].b.sensor_id, "sz01");
        let cross = network_average(&spectra, Subset::CrossStationOnly, Weighting::Uniform).unwrap();
        assert_eq!(cross.n_correlators, 26);
    }

    #[test]
    fn two_sensors_give_one_spectrum() {
        let mut run = quick_run(1, 20.0, 0.0);
        run.records.truncate(2);
        assert_eq!(all_pair_spectra(&run, &quick_cfg()).unwrap().len(), 1);
        run.records.truncate(1);
        assert!(all_pair_spectra(&run, &quick_cfg()).is_err());
    }

    #[test]
    fn single_spectrum_average_is_identity() {
        let mut run = quick_run(2, 20.0, 0.0);
        run.records.truncate(2);
        let spectra = all_pair_spectra(&run, &quick_cfg()).unwrap();
        for weighting in [Weighting::Uniform, Weighting::InverseVariance] {
            let avg = network_average(&spectra, Subset::All, weighting).unwrap();
            assert_eq!(avg.mean_real, spectra[0].real());
            for (s, v) in avg.bin_sigma.iter().zip(&spectra[0].re_var) {
                assert!((s * s - v).abs() <= 1e-12 * v);
            }
        }
        assert!(matches!(
            network_average(&spectra, Subset::CrossStationOnly, Weighting::Uniform),
            Err(Error::EmptySubset(_))
        ));
    }

    #[test]
    fn inverse_variance_prefers_quiet_pairs() {
        let mut spec = RunSpec::two_station_default(4).with_duration(100.0).with_common_mode(0.0);
        spec.sensors.truncate(3);
        spec.sensors[2].noise_asd = 150e-15;
        let run = generate_run(&spec).unwrap();
        let spectra = all_pair_spectra(&run, &quick_cfg()).unwrap();
        let uni = network_average(&spectra, Subset::All, Weighting::Uniform).unwrap();
        let ivw = network_average(&spectra, Subset::All, Weighting::InverseVariance).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&ivw.bin_sigma) < 0.5 * mean(&uni.bin_sigma));
    }

    #[test]
    fn sensitivity_curve_matches_prefix_averages() {
        let run = quick_run(3, 100.0, 0.0);
        let spectra = all_pair_spectra(&run, &quick_cfg()).unwrap();
        let curve = sensitivity_curve(&spectra, 10.1).unwrap();
        assert_eq!(curve.len(), 105);
        let k = spectra[0].grid.index_of(10.1).unwrap();
        for n in [1, 7, 105] {
            let avg = network_average(&spectra[..n], Subset::All, Weighting::Uniform).unwrap();
            let asd = (avg.bin_sigma[k] * (2.0 * avg.effective_segments).sqrt()).sqrt();
            assert!((asd - curve[n - 1].asd).abs() < 1e-9 * asd);
        }
        assert!(sensitivity_curve(&spectra, 900.0).is_err());
    }

    #[test]
    fn noiseless_network_has_zero_sensitivity() {
        let spec = RunSpec::two_station_default(3)
            .with_duration(20.0)
            .with_common_mode(0.0)
            .with_sensor_noise(0.0);
        let run = generate_run(&spec).unwrap();
        let spectra = all_pair_spectra(&run, &quick_cfg()).unwrap();
        let curve = sensitivity_curve(&spectra, 10.1).unwrap();
        assert!(curve.iter().all(|p| p.asd == 0.0));
    }

    #[test]
    fn power_law_fit_recovers_generator() {
        let exact: Vec<SensitivityPoint> = (1..=105)
            .map(|n| SensitivityPoint {
                n,
                asd: 15e-15 * (n as f64).powf(-0.25),
            })
            .collect();
        let fit = fit_power_law(&exact).unwrap();
        assert!((fit.exponent - 0.25).abs() < 1e-6);
        assert!((fit.prefactor / 15e-15 - 1.0).abs() < 1e-6);

        let flat: Vec<SensitivityPoint> =
            (1..=10).map(|n| SensitivityPoint { n, asd: 3.0 }).collect();
        assert!(fit_power_law(&flat).unwrap().exponent.abs() < 1e-12);

        let mut bad = flat.clone();
        bad[3].asd = 0.0;
        assert!(fit_power_law(&bad).is_err());
        assert!(fit_power_law(&flat[..4]).is_err());
    }
}
