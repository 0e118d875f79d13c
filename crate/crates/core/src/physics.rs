//! Units, constants and the dark-photon to wall-field conversion.
//!
//! Every natural-unit conversion in the crate goes through [`CONSTANTS`].
//! Frequencies are in hertz, masses in electronvolts, fields in tesla.
//! The dark-photon signal is a single coherent tone whose amplitude next to
//! a shield wall is
//!
//! ```text
//! B = 1.63e-12 T * eps * (f / 10 Hz) * (L / 1 m) * coupling
//! ```
//!
//! where `L` is the edge length of the (cubic) shield and `coupling` projects
//! the tangential wall field onto a sensor's sensitive axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wall-field coefficient in tesla for eps = 1, f = 10 Hz, L = 1 m.
pub const WALL_FIELD_COEFFICIENT_T: f64 = 1.63e-12;
const WALL_FIELD_REFERENCE_HZ: f64 = 10.0;

/// One physical constant with its unit and where the value comes from.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Constant {
    pub value: f64,
    pub unit: &'static str,
    pub source: &'static str,
}

/// The single constants table used for all unit conversions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Constants {
    pub planck_ev_s: Constant,
    pub hbar_c_ev_nm: Constant,
    pub speed_of_light_m_s: Constant,
    pub elementary_charge_c: Constant,
    pub vacuum_permeability_n_a2: Constant,
    pub tesla_in_ev2: Constant,
    pub gev_per_cm3_in_ev4: Constant,
    pub wall_field_coefficient_t: Constant,
}

pub const CONSTANTS: Constants = Constants {
    planck_ev_s: Constant {
        value: 4.135667696e-15,
        unit: "eV s",
        source: "CODATA 2018 (exact)",
    },
    hbar_c_ev_nm: Constant {
        value: 197.3269804,
        unit: "eV nm",
        source: "CODATA 2018",
    },
    speed_of_light_m_s: Constant {
        value: 299_792_458.0,
        unit: "m/s",
        source: "SI (exact)",
    },
    elementary_charge_c: Constant {
        value: 1.602176634e-19,
        unit: "C",
        source: "SI (exact)",
    },
    vacuum_permeability_n_a2: Constant {
        value: 1.25663706212e-6,
        unit: "N/A^2",
        source: "CODATA 2018",
    },
    tesla_in_ev2: Constant {
        value: 195.352_771_140_595_6,
        unit: "eV^2 per T",
        source: "sqrt((hbar c)^3 / (mu0 e)), Heaviside-Lorentz natural units",
    },
    gev_per_cm3_in_ev4: Constant {
        value: 7.683_505_569_453_846e-6,
        unit: "eV^4 per (GeV/cm^3)",
        source: "1e9 eV * (hbar c / 1 cm)^3",
    },
    wall_field_coefficient_t: Constant {
        value: WALL_FIELD_COEFFICIENT_T,
        unit: "T",
        source: "wall-adjacent field for eps=1, f=10 Hz, 1 m shield",
    },
};

pub fn planck_ev_s() -> f64 {
    CONSTANTS.planck_ev_s.value
}

pub fn hbar_c_ev_m() -> f64 {
    CONSTANTS.hbar_c_ev_nm.value * 1e-9
}

/// Local dark-matter halo parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaloModel {
    /// GeV/cm^3.
    pub local_density: f64,
    /// Fraction of c.
    pub velocity_dispersion: f64,
    pub quality_factor: f64,
}

impl Default for HaloModel {
    fn default() -> Self {
        Self {
            local_density: 0.45,
            velocity_dispersion: 1e-3,
            quality_factor: 1e6,
        }
    }
}

impl HaloModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.local_density > 0.0) {
            return Err(Error::Domain("halo local_density must be positive".into()));
        }
        if !(self.velocity_dispersion > 0.0 && self.velocity_dispersion < 1.0) {
            return Err(Error::Domain("halo velocity_dispersion must be in (0, 1)".into()));
        }
        let expected = self.velocity_dispersion.powi(-2);
        if ((self.quality_factor - expected) / expected).abs() > 0.01 {
            return Err(Error::Domain(format!(
                "quality_factor {} inconsistent with velocity dispersion (expected {expected})",
                self.quality_factor
            )));
        }
        Ok(())
    }
}

/// Shield room size and the per-sensor projection of the wall field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShieldGeometry {
    /// V^(1/3) in meters.
    pub edge_length: f64,
    pub coupling_factor: f64,
}

impl Default for ShieldGeometry {
    fn default() -> Self {
        Self {
            edge_length: 2.0,
            coupling_factor: 1.0,
        }
    }
}

impl ShieldGeometry {
    pub fn new(edge_length: f64, coupling_factor: f64) -> Result<Self> {
        let geom = Self {
            edge_length,
            coupling_factor,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.edge_length > 0.0) || !self.edge_length.is_finite() {
            return Err(Error::Domain("shield edge_length must be positive".into()));
        }
        if !(self.coupling_factor > 0.0 && self.coupling_factor <= 1.0) {
            return Err(Error::Domain(format!(
                "coupling_factor {} outside (0, 1]",
                self.coupling_factor
            )));
        }
        Ok(())
    }

    pub fn with_coupling(self, coupling_factor: f64) -> Self {
        Self {
            coupling_factor,
            ..self
        }
    }
}

/// Dark-photon dark-matter signal parameters for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpdmParams {
    pub frequency: f64,
    /// Redundant with `frequency`; kept consistent by [`DpdmParams::validate`].
    pub mass: f64,
    pub epsilon: f64,
    pub polarization: [f64; 3],
    pub phase: f64,
    /// Rayleigh draw with unit rms; 1.0 is the deterministic rms amplitude.
    pub amplitude_scale: f64,
}

impl DpdmParams {
    /// Deterministic rms-amplitude tone polarized along the sensitive axis.
    pub fn new(frequency: f64, epsilon: f64) -> Result<Self> {
        let params = Self {
            frequency,
            mass: freq_to_mass(frequency)?,
            epsilon,
            polarization: [0.0, 1.0, 0.0],
            phase: 0.0,
            amplitude_scale: 1.0,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase.rem_euclid(2.0 * PI);
        self
    }

    /// Replace the amplitude with a unit-rms Rayleigh draw. `uniform` must lie
    /// in (0, 1]; |A|^2 is exponential with mean one.
    pub fn with_rayleigh_amplitude(mut self, uniform: f64) -> Self {
        self.amplitude_scale = (-uniform.ln()).sqrt();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let expected = freq_to_mass(self.frequency)?;
        if ((self.mass - expected) / expected).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "mass {} eV inconsistent with frequency {} Hz",
                self.mass, self.frequency
            )));
        }
        let norm = self.polarization.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("polarization norm {norm} is not 1")));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Domain("epsilon must be non-negative".into()));
        }
        if !(self.amplitude_scale >= 0.0) {
            return Err(Error::Domain("amplitude_scale must be non-negative".into()));
        }
        if !(0.0..2.0 * PI).contains(&self.phase) {
            return Err(Error::Domain(format!("phase {} outside [0, 2pi)", self.phase)));
        }
        Ok(())
    }
}

pub fn freq_to_mass(frequency: f64) -> Result<f64> {
    if !(frequency > 0.0) || !frequency.is_finite() {
        return Err(Error::Domain(format!("frequency must be positive, got {frequency}")));
    }
    Ok(planck_ev_s() * frequency)
}

pub fn mass_to_freq(mass: f64) -> Result<f64> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Domain(format!("mass must be positive, got {mass}")));
    }
    Ok(mass / planck_ev_s())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coherence {
    pub time: f64,
    pub length: f64,
}

/// Coherence time (s) and length (m) of the dark-matter wave at `frequency`.
pub fn coherence_properties(frequency: f64, halo: &HaloModel) -> Result<Coherence> {
    let mass = freq_to_mass(frequency)?;
    Ok(Coherence {
        time: halo.quality_factor / frequency,
        length: hbar_c_ev_m() / (mass * halo.velocity_dispersion),
    })
}

fn check_signal_inputs(frequency: f64, geom: &ShieldGeometry) -> Result<()> {
    if !(frequency > 0.0) || !frequency.is_finite() {
        return Err(Error::Domain(format!("frequency must be positive, got {frequency}")));
    }
    if !(geom.edge_length > 0.0) {
        return Err(Error::Domain("shield edge_length must be positive".into()));
    }
    Ok(())
}

/// Tangential field amplitude (tesla) next to the shield wall.
pub fn wall_field_amplitude(epsilon: f64, frequency: f64, geom: &ShieldGeometry) -> Result<f64> {
    check_signal_inputs(frequency, geom)?;
    geom.validate()?;
    if !(epsilon >= 0.0) {
        return Err(Error::Domain("epsilon must be non-negative".into()));
    }
    Ok(WALL_FIELD_COEFFICIENT_T
        * epsilon
        * (frequency / WALL_FIELD_REFERENCE_HZ)
        * geom.edge_length
        * geom.coupling_factor)
}

/// Inverse of [`wall_field_amplitude`].
pub fn epsilon_from_field(field: f64, frequency: f64, geom: &ShieldGeometry) -> Result<f64> {
    check_signal_inputs(frequency, geom)?;
    if geom.coupling_factor == 0.0 {
        return Err(Error::Domain(
            "zero coupling factor: sensor is blind to the signal direction".into(),
        ));
    }
    geom.validate()?;
    if !(field >= 0.0) {
        return Err(Error::Domain("field amplitude must be non-negative".into()));
    }
    Ok(field
        / (WALL_FIELD_COEFFICIENT_T
            * (frequency / WALL_FIELD_REFERENCE_HZ)
            * geom.edge_length
            * geom.coupling_factor))
}

/// RMS dark-photon potential |A'| = sqrt(2 rho) / m in natural units (eV).
pub fn rms_potential(mass: f64, halo: &HaloModel) -> Result<f64> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Domain(format!("mass must be positive, got {mass}")));
    }
    let rho = halo.local_density * CONSTANTS.gev_per_cm3_in_ev4.value;
    Ok((2.0 * rho).sqrt() / mass)
}

/// Wall field (tesla) from the effective current |J| = eps m^2 |A'_axis| times
/// the shield edge length, where |A'_axis| = |A'| / sqrt(3) is the single-axis
/// component of an isotropically polarized field. This is the first-principles
/// route to [`WALL_FIELD_COEFFICIENT_T`].
pub fn projected_wall_field(
    epsilon: f64,
    frequency: f64,
    edge_length: f64,
    halo: &HaloModel,
) -> Result<f64> {
    let mass = freq_to_mass(frequency)?;
    let potential_axis = rms_potential(mass, halo)? / 3f64.sqrt();
    let current = epsilon * mass * mass * potential_axis;
    let length_natural = edge_length / hbar_c_ev_m();
    Ok(current * length_natural / CONSTANTS.tesla_in_ev2.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn band_endpoint_masses() {
        let lo = freq_to_mass(1.0).unwrap();
        let hi = freq_to_mass(500.0).unwrap();
        assert!(rel(lo, 4.1357e-15) < 1e-4);
        assert!(rel(hi, 2.0678e-12) < 1e-4);
        assert!(rel(freq_to_mass(10.1).unwrap(), 4.177e-14) < 1e-3);
        assert_eq!(format!("{:.1}", lo * 1e15), "4.1");
        assert_eq!(format!("{:.1}", hi * 1e12), "2.1");
    }

    #[test]
    fn non_positive_frequency_is_domain_error() {
        assert!(matches!(freq_to_mass(0.0), Err(Error::Domain(_))));
        assert!(matches!(freq_to_mass(-3.0), Err(Error::Domain(_))));
        assert!(matches!(mass_to_freq(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn mass_frequency_roundtrip_on_log_grid() {
        for i in 0..1000 {
            let f = 10f64.powf(-3.0 + 9.0 * i as f64 / 999.0);
            let back = mass_to_freq(freq_to_mass(f).unwrap()).unwrap();
            assert!(rel(back, f) < 1e-9, "f = {f}");
        }
    }

    #[test]
    fn coherence_examples() {
        let halo = HaloModel::default();
        let c = coherence_properties(500.0, &halo).unwrap();
        assert!(rel(c.time, 2000.0) < 1e-12);
        let c = coherence_properties(1.0, &halo).unwrap();
        assert!(rel(c.length, 4.771e10) < 1e-3);
        assert!(c.length > 1.692e6);

        let sharp = HaloModel {
            velocity_dispersion: 1e-9,
            quality_factor: 1e18,
            ..halo
        };
        assert!(coherence_properties(1.0, &sharp).unwrap().time > 1e17);
    }

    #[test]
    fn coherence_time_covers_run_length_across_band() {
        let halo = HaloModel::default();
        for i in 0..=499 {
            let f = 1.0 + i as f64;
            let c = coherence_properties(f, &halo).unwrap();
            assert!((c.time * f / halo.quality_factor - 1.0).abs() < 1e-12);
            assert!(c.time >= 2000.0);
        }
    }

    #[test]
    fn wall_field_examples() {
        let unit = ShieldGeometry::new(1.0, 1.0).unwrap();
        let b = wall_field_amplitude(1.0, 10.0, &unit).unwrap();
        assert_eq!(format!("{b:.2e}"), "1.63e-12");
        assert_eq!(wall_field_amplitude(0.0, 10.0, &unit).unwrap(), 0.0);
        let big = ShieldGeometry::default();
        let b = wall_field_amplitude(1e-6, 500.0, &big).unwrap();
        assert!(rel(b, 1.63e-16) < 1e-12);
    }

    #[test]
    fn wall_field_is_linear_in_each_factor() {
        let g = ShieldGeometry::new(1.5, 0.4).unwrap();
        let base = wall_field_amplitude(3e-6, 37.0, &g).unwrap();
        let twice = |b: f64| rel(b, 2.0 * base) < 1e-15;
        assert!(twice(wall_field_amplitude(6e-6, 37.0, &g).unwrap()));
        assert!(twice(wall_field_amplitude(3e-6, 74.0, &g).unwrap()));
        assert!(twice(
            wall_field_amplitude(3e-6, 37.0, &ShieldGeometry::new(3.0, 0.4).unwrap()).unwrap()
        ));
        assert!(twice(wall_field_amplitude(3e-6, 37.0, &g.with_coupling(0.8)).unwrap()));
    }

    #[test]
    fn epsilon_inverts_wall_field() {
        let unit = ShieldGeometry::new(1.0, 1.0).unwrap();
        assert!(rel(epsilon_from_field(1.63e-12, 10.0, &unit).unwrap(), 1.0) < 1e-12);
        assert_eq!(epsilon_from_field(0.0, 10.0, &unit).unwrap(), 0.0);
        let big = ShieldGeometry::default();
        assert!(rel(epsilon_from_field(1.63e-16, 500.0, &big).unwrap(), 1e-6) < 1e-12);

        let blind = ShieldGeometry {
            edge_length: 2.0,
            coupling_factor: 0.0,
        };
        assert!(matches!(epsilon_from_field(1e-15, 10.0, &blind), Err(Error::Domain(_))));
    }

    #[test]
    fn rms_potential_scalings() {
        let halo = HaloModel::default();
        let a = rms_potential(1e-13, &halo).unwrap();
        let dense = HaloModel {
            local_density: 0.9,
            ..halo
        };
        assert!(rel(rms_potential(1e-13, &dense).unwrap(), a * 2f64.sqrt()) < 1e-12);
        assert!(rel(rms_potential(2e-13, &halo).unwrap(), a / 2.0) < 1e-12);
    }

    #[test]
    fn first_principles_field_matches_coefficient() {
        // 1.6288e-12 T from hbar, c, mu0, e and rho = 0.45 GeV/cm^3 (computed offline).
        let b = projected_wall_field(1.0, 10.0, 1.0, &HaloModel::default()).unwrap();
        assert!(rel(b, 1.628_845_610_481_930_9e-12) < 1e-6);
        assert!(rel(b, WALL_FIELD_COEFFICIENT_T) < 0.05);
    }

    #[test]
    fn derived_constants_are_consistent() {
        let c = CONSTANTS;
        let hbarc = c.hbar_c_ev_nm.value * 1e-9;
        let t = (hbarc.powi(3) / (c.vacuum_permeability_n_a2.value * c.elementary_charge_c.value))
            .sqrt();
        assert!(rel(t, c.tesla_in_ev2.value) < 1e-12);
        let gev = 1e9 * (hbarc * 100.0).powi(3);
        assert!(rel(gev, c.gev_per_cm3_in_ev4.value) < 1e-12);
        let hbar = c.planck_ev_s.value / (2.0 * PI);
        assert!(rel(hbar * c.speed_of_light_m_s.value, hbarc) < 1e-8);
    }

    #[test]
    fn dpdm_params_invariants() {
        let p = DpdmParams::new(250.25, 1e-5).unwrap();
        assert!(p.validate().is_ok());
        let mut bad = p;
        bad.mass *= 1.0 + 1e-6;
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.polarization = [1.0, 1.0, 0.0];
        assert!(bad.validate().is_err());
        let p = p.with_rayleigh_amplitude((-1.0f64).exp());
        assert!(rel(p.amplitude_scale, 1.0) < 1e-12);
    }

    #[test]
    fn halo_validation() {
        assert!(HaloModel::default().validate().is_ok());
        let bad = HaloModel {
            quality_factor: 5e5,
            ..HaloModel::default()
        };
        assert!(bad.validate().is_err());
    }
}
