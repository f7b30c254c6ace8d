//! Indoor-hotspot path loss and the backscatter link budget.

use std::sync::atomic::{AtomicBool, Ordering};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{db_to_linear, linear_to_db, Point2, Point3};
use crate::scenario::Scenario;
use crate::vlc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfLinkSpec {
    pub carrier_power_dbm: f64,
    pub carrier_freq_ghz: f64,
    /// Carrier source antenna gain G_T.
    pub gain_source_dbi: f64,
    /// Reader antenna gain G_R.
    pub gain_reader_dbi: f64,
    pub polarization_forward: f64,
    pub polarization_backward: f64,
    pub modulation_factor: f64,
    pub object_penalty_db: f64,
    pub shadow_sigma_los_db: f64,
    pub shadow_sigma_nlos_db: f64,
}

impl Default for RfLinkSpec {
    fn default() -> Self {
        Self {
            carrier_power_dbm: 20.0,
            carrier_freq_ghz: 2.4,
            gain_source_dbi: 3.0,
            gain_reader_dbi: 3.0,
            polarization_forward: 0.5,
            polarization_backward: 0.5,
            modulation_factor: 0.5,
            object_penalty_db: 0.0,
            shadow_sigma_los_db: 3.0,
            shadow_sigma_nlos_db: 8.03,
        }
    }
}

impl RfLinkSpec {
    /// Backscatter efficiency ξ = χ_f·χ_b·M / Θ².
    pub fn efficiency(&self) -> f64 {
        let theta = db_to_linear(self.object_penalty_db);
        self.polarization_forward * self.polarization_backward * self.modulation_factor / (theta * theta)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.polarization_forward) || !unit(self.polarization_backward) {
            return Err(invalid("rf.polarization", "must lie in (0, 1]"));
        }
        if !unit(self.modulation_factor) {
            return Err(invalid("rf.modulation_factor", "must lie in (0, 1]"));
        }
        if !unit(self.efficiency()) {
            return Err(invalid("rf.object_penalty_db", "backscatter efficiency must lie in (0, 1]"));
        }
        if !(self.carrier_freq_ghz > 0.0) {
            return Err(invalid("rf.carrier_freq_ghz", "must be positive"));
        }
        let finite = [self.carrier_power_dbm, self.gain_source_dbi, self.gain_reader_dbi, self.object_penalty_db];
        if !finite.iter().all(|v| v.is_finite()) {
            return Err(invalid("rf", "powers and gains must be finite"));
        }
        if !(self.shadow_sigma_los_db >= 0.0 && self.shadow_sigma_nlos_db >= 0.0) {
            return Err(invalid("rf.shadow_sigma", "must be non-negative"));
        }
        Ok(())
    }
}

/// Reflection coefficient of a load `z` seen from an antenna `za`.
/// An infinite load (open circuit) gives +1.
pub fn reflection_coefficient(z: Complex64, za: Complex64) -> Complex64 {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Complex64::new(1.0, 0.0);
    }
    (z - za.conj()) / (z + za)
}

/// M = ¼·|Γ₁ − Γ₂|² for the two switch states.
pub fn modulation_factor(g1: Complex64, g2: Complex64) -> f64 {
    0.25 * (g1 - g2).norm_sqr()
}

fn check_distance(d: f64) -> Result<()> {
    if d.is_finite() && d >= 1.0 {
        Ok(())
    } else {
        Err(Error::ModelRange(d))
    }
}

pub fn pathloss_los_db(d_3d: f64, f_c_ghz: f64) -> Result<f64> {
    check_distance(d_3d)?;
    Ok(32.4 + 17.3 * d_3d.log10() + 20.0 * f_c_ghz.log10())
}

pub fn pathloss_nlos_db(d_3d: f64, f_c_ghz: f64) -> Result<f64> {
    let los = pathloss_los_db(d_3d, f_c_ghz)?;
    Ok(los.max(17.3 + 38.3 * d_3d.log10() + 24.9 * f_c_ghz.log10()))
}

pub fn los_probability(d_2d: f64) -> f64 {
    if d_2d <= 5.0 {
        1.0
    } else if d_2d <= 49.0 {
        (-(d_2d - 5.0) / 70.8).exp()
    } else {
        0.54 * (-(d_2d - 49.0) / 211.7).exp()
    }
}

/// LoS-probability-weighted mean loss.
pub fn expected_pathloss_db(d_3d: f64, d_2d: f64, f_c_ghz: f64) -> Result<f64> {
    let p = los_probability(d_2d);
    Ok(p * pathloss_los_db(d_3d, f_c_ghz)? + (1.0 - p) * pathloss_nlos_db(d_3d, f_c_ghz)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkCondition {
    Los,
    Nlos,
    Expected,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathLossSample {
    pub loss_db: f64,
    pub condition: LinkCondition,
    pub shadowing_db: f64,
}

/// How a hop's loss is realised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathLossMode {
    /// Deterministic LoS/NLoS mix, no shadowing.
    Expected,
    /// Bernoulli LoS state plus log-normal shadowing.
    Sampled,
}

pub fn sample_pathloss<R: Rng + ?Sized>(
    d_3d: f64,
    d_2d: f64,
    spec: &RfLinkSpec,
    mode: PathLossMode,
    rng: &mut R,
) -> Result<PathLossSample> {
    let f = spec.carrier_freq_ghz;
    match mode {
        PathLossMode::Expected => Ok(PathLossSample {
            loss_db: expected_pathloss_db(d_3d, d_2d, f)?,
            condition: LinkCondition::Expected,
            shadowing_db: 0.0,
        }),
        PathLossMode::Sampled => {
            let los = rng.random::<f64>() < los_probability(d_2d);
            let (mean, sigma, condition) = if los {
                (pathloss_los_db(d_3d, f)?, spec.shadow_sigma_los_db, LinkCondition::Los)
            } else {
                (pathloss_nlos_db(d_3d, f)?, spec.shadow_sigma_nlos_db, LinkCondition::Nlos)
            };
            let shadowing_db = if sigma > 0.0 {
                Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
            } else {
                0.0
            };
            Ok(PathLossSample { loss_db: mean + shadowing_db, condition, shadowing_db })
        }
    }
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

fn clamped(d: f64) -> f64 {
    if d < 1.0 {
        if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("RF hop of {d:.3} m is shorter than the path-loss model allows; clamping to 1 m");
        }
        1.0
    } else {
        d
    }
}

/// Constant part of the budget: 10·log ξ + G_T + G_R + 2·G_BD, in dB.
pub fn link_gain_db(scenario: &Scenario) -> f64 {
    let rf = &scenario.rf;
    linear_to_db(rf.efficiency()) + rf.gain_source_dbi + rf.gain_reader_dbi + 2.0 * scenario.device.antenna_gain_dbi
}

/// Forward (source→device) and backward (device→reader) hop losses.
pub fn hop_losses<R: Rng + ?Sized>(
    scenario: &Scenario,
    pose: Point3,
    mode: PathLossMode,
    rng: &mut R,
) -> (PathLossSample, PathLossSample) {
    let hop = |a: Point3, rng: &mut R| {
        let d3 = clamped(a.distance(pose));
        sample_pathloss(d3, a.horizontal_distance(pose), &scenario.rf, mode, rng).expect("distance clamped into range")
    };
    let fwd = hop(scenario.rfs, rng);
    let bwd = hop(scenario.reader, rng);
    (fwd, bwd)
}

/// Received backscatter power at the reader in dBm, or `None` when the
/// device sees no modulating light.
pub fn backscatter_rss_db<R: Rng + ?Sized>(
    scenario: &Scenario,
    p: Point2,
    i_ac: f64,
    mode: PathLossMode,
    rng: &mut R,
) -> Option<f64> {
    if !(i_ac > 0.0) {
        return None;
    }
    let (f, b) = hop_losses(scenario, scenario.device_pose(p), mode, rng);
    Some(scenario.rf.carrier_power_dbm + link_gain_db(scenario) + 20.0 * i_ac.log10() - f.loss_db - b.loss_db)
}

/// Shadow-free predicted RSS at a floor position, using the device's own
/// optical input.
pub fn expected_rss_db(scenario: &Scenario, p: Point2) -> Option<f64> {
    let i_ac = vlc::effective_ac_amplitude(&vlc::received_ac_amplitudes(scenario, p));
    if !(i_ac > 0.0) {
        return None;
    }
    let pose = scenario.device_pose(p);
    let f = scenario.rf.carrier_freq_ghz;
    let loss = |a: Point3| {
        expected_pathloss_db(clamped(a.distance(pose)), a.horizontal_distance(pose), f).expect("distance clamped into range")
    };
    Some(scenario.rf.carrier_power_dbm + link_gain_db(scenario) + 20.0 * i_ac.log10() - loss(scenario.rfs) - loss(scenario.reader))
}
