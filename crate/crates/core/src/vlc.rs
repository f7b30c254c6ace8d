//! Optical downlink: Lambertian channel gain, photocurrent split and
//! energy harvesting at the device.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{dbm_to_watts, Point2, Point3};
use crate::grid::Grid;
use crate::scenario::{DeviceSpec, LedAp, Scenario};

/// Lambertian order ν for a given half-power semi-angle.
pub fn lambertian_index(semi_angle_deg: f64) -> f64 {
    -std::f64::consts::LN_2 / semi_angle_deg.to_radians().cos().ln()
}

/// Geometry of one LED-to-photodetector link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpticalLinkState {
    pub distance: f64,
    pub irradiance_angle_deg: f64,
    pub incidence_angle_deg: f64,
    pub lambertian_index: f64,
}

impl OpticalLinkState {
    pub fn new(led: &LedAp, pose: Point3) -> Result<Self> {
        let distance = led.position.distance(pose);
        if distance == 0.0 {
            return Err(Error::CoincidentPositions);
        }
        let dz = led.position.z - pose.z;
        if dz <= 0.0 {
            return Err(Error::DeviceAboveLed { device_z: pose.z, led_z: led.position.z });
        }
        // Photodetector faces straight up, so both angles coincide.
        let angle = (dz / distance).clamp(-1.0, 1.0).acos().to_degrees();
        Ok(Self {
            distance,
            irradiance_angle_deg: angle,
            incidence_angle_deg: angle,
            lambertian_index: led.lambertian_index(),
        })
    }
}

/// DC gain of the direct optical path.
///
/// The field-of-view test is done on horizontal offset against
/// `dz * tan(fov)`, which is the same boundary as the cell radius.
pub fn lambertian_gain(led: &LedAp, pose: Point3, device: &DeviceSpec) -> Result<f64> {
    let link = OpticalLinkState::new(led, pose)?;
    let dz = led.position.z - pose.z;
    let rho = led.position.horizontal_distance(pose);
    let fov = device.fov_semi_angle_deg.to_radians();
    if fov < std::f64::consts::FRAC_PI_2 && rho > dz * fov.tan() {
        return Ok(0.0);
    }
    let nu = link.lambertian_index;
    let d2 = link.distance * link.distance;
    let cos = dz / link.distance;
    Ok((nu + 1.0) * device.pd_area / (2.0 * std::f64::consts::PI * d2) * cos.powf(nu) * cos)
}

fn gains(scenario: &Scenario, p: Point2) -> Vec<f64> {
    let pose = scenario.device_pose(p);
    scenario
        .leds
        .iter()
        .map(|l| lambertian_gain(l, pose, &scenario.device).unwrap_or(0.0))
        .collect()
}

/// Peak AC photocurrent contributed by each LED, aligned with `scenario.leds`.
pub fn received_ac_amplitudes(scenario: &Scenario, p: Point2) -> Vec<f64> {
    let eta = scenario.device.responsivity;
    gains(scenario, p)
        .iter()
        .zip(&scenario.leds)
        .map(|(h, l)| eta * l.optical_power_factor * h * l.modulation_amplitude)
        .collect()
}

/// RMS value of the superposed square-wave currents, used as the single
/// I_AC figure in the backscatter budget.
pub fn effective_ac_amplitude(amplitudes: &[f64]) -> f64 {
    amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdOutput {
    /// Per-LED AC amplitudes, aligned with `scenario.leds`.
    pub ac_amplitudes: Vec<f64>,
    pub ac_component: f64,
    pub dc_component: f64,
    /// N_0·B, linear.
    pub noise_variance: f64,
}

pub fn pd_output(scenario: &Scenario, p: Point2) -> PdOutput {
    let h = gains(scenario, p);
    let eta = scenario.device.responsivity;
    let ac: Vec<f64> = h
        .iter()
        .zip(&scenario.leds)
        .map(|(h, l)| eta * l.optical_power_factor * h * l.modulation_amplitude)
        .collect();
    let dc = eta * h.iter().zip(&scenario.leds).map(|(h, l)| l.optical_power_factor * h * l.bias_current).sum::<f64>();
    PdOutput {
        ac_component: effective_ac_amplitude(&ac),
        ac_amplitudes: ac,
        dc_component: dc,
        noise_variance: dbm_to_watts(scenario.noise.power_dbm()),
    }
}

pub fn dc_photocurrent(scenario: &Scenario, p: Point2) -> f64 {
    pd_output(scenario, p).dc_component
}

pub fn open_circuit_voltage(i_dc: f64, device: &DeviceSpec) -> f64 {
    device.thermal_voltage * (i_dc / device.dark_current).ln_1p()
}

/// Harvested electrical power in W.
pub fn harvested_power(scenario: &Scenario, p: Point2) -> f64 {
    let i_dc = dc_photocurrent(scenario, p);
    scenario.device.fill_factor * i_dc * open_circuit_voltage(i_dc, &scenario.device)
}

/// Aggregate received optical signal power Σ P_l·H_l over a uniform grid
/// covering the room, in W.
pub fn vlc_power_heatmap(scenario: &Scenario, resolution: f64) -> Result<Grid> {
    let mut grid = Grid::covering(&scenario.room, resolution, "W")?;
    grid.values = grid
        .points()
        .par_iter()
        .map(|&p| {
            gains(scenario, p)
                .iter()
                .zip(&scenario.leds)
                .map(|(h, l)| l.optical_power_factor * l.bias_current * h)
                .sum()
        })
        .collect();
    Ok(grid)
}
