use serde::{Deserialize, Serialize};

use super::pipeline::{analyze, Analysis, AnalysisConfig};
use super::threshold::Threshold;
use crate::error::{Error, Result};
use crate::physics::DpdmParams;
use crate::simnet::{add_tone, dpdm_amplitude, RunData, RunSpec};

/// Add common dark-photon tones to every record, scaled by each sensor's
/// coupling and its station's shield. Phases refer to the run spec's start time,
/// so records with different start stamps stay phase-coherent.
pub fn inject_tones(run: &RunData, spec: &RunSpec, tones: &[DpdmParams]) -> Result<RunData> {
    for t in tones {
        t.validate()?;
    }
    let mut out = run.clone();
    for record in &mut out.records {
        let sensor = spec
            .sensors
            .iter()
            .find(|s| s.station_id == record.station_id && s.sensor_id == record.sensor_id)
            .ok_or_else(|| Error::InvalidConfig(format!("sensor {} not in run spec", record.key())))?;
        let station = spec
            .station(&sensor.station_id)
            .ok_or_else(|| Error::InvalidConfig(format!("station {} not in run spec", sensor.station_id)))?;
        let t0 = (record.start_time as i128 - spec.start_time_gps_ns as i128) as f64 * 1e-9;
        for tone in tones {
            let amplitude = dpdm_amplitude(tone, &station.shield, sensor.coupling_factor)?;
            add_tone(&mut record.samples, record.sample_rate, t0, tone.frequency, amplitude, tone.phase);
        }
    }
    Ok(out)
}

pub fn inject_tone(run: &RunData, spec: &RunSpec, params: &DpdmParams) -> Result<RunData> {
    inject_tones(run, spec, std::slice::from_ref(params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub frequency: f64,
    pub bin: usize,
    pub injected_epsilon: f64,
    pub recovered_epsilon: f64,
    pub snr: f64,
    pub threshold: f64,
    /// Injected power over the local noise sigma.
    pub expected_snr: f64,
    pub detected: bool,
}

impl Recovery {
    pub fn ratio(&self) -> f64 {
        self.recovered_epsilon / self.injected_epsilon
    }
}

/// Read back the implied kinetic mixing at each injected frequency.
pub fn recoveries(analysis: &Analysis, tones: &[DpdmParams]) -> Result<Vec<Recovery>> {
    tones
        .iter()
        .map(|t| {
            let k = analysis.snr.grid.index_of(t.frequency).ok_or_else(|| {
                Error::Domain(format!("injection at {} Hz is outside the analysis band", t.frequency))
            })?;
            let f = analysis.snr.grid.frequency(k);
            let injected_power = analysis.calibration.power_from_epsilon(t.epsilon * t.amplitude_scale, f)?;
            let sigma = analysis.snr.sigma[k];
            Ok(Recovery {
                frequency: f,
                bin: k,
                injected_epsilon: t.epsilon,
                recovered_epsilon: analysis.calibration.epsilon_from_power(analysis.snr.mean_real[k], f)?,
                snr: analysis.snr.snr[k],
                threshold: analysis.threshold.at(k),
                expected_snr: if sigma > 0.0 { injected_power / sigma } else { f64::INFINITY },
                detected: analysis.snr.snr[k] > analysis.threshold.at(k),
            })
        })
        .collect()
}

/// Inject several tones, run the full pipeline once and report each
/// recovery. Tones should sit on analysis-grid bin centers; off-grid tones
/// are read at their nearest bin and lose power to scalloping.
pub fn inject_and_recover_many(
    run: &RunData,
    spec: &RunSpec,
    tones: &[DpdmParams],
    cfg: &AnalysisConfig,
    threshold: Option<Threshold>,
) -> Result<(Analysis, Vec<Recovery>)> {
    let injected = inject_tones(run, spec, tones)?;
    let analysis = analyze(&injected, spec, cfg, threshold)?;
    let rec = recoveries(&analysis, tones)?;
    Ok((analysis, rec))
}

pub fn inject_and_recover(
    run: &RunData,
    spec: &RunSpec,
    params: &DpdmParams,
    cfg: &AnalysisConfig,
    threshold: Option<Threshold>,
) -> Result<Recovery> {
    let (_, mut rec) = inject_and_recover_many(run, spec, std::slice::from_ref(params), cfg, threshold)?;
    Ok(rec.remove(0))
}
