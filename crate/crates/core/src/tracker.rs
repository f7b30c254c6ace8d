//! Particle filter fusing cell-id reports with backscatter RSS.
//!
//! Each step runs predict, weight update, resample and estimate. The id
//! likelihood is match-or-penalty: a particle survives only if its
//! predicted id set shares an id with the measured one (two empty sets
//! also match). The RSS likelihood is Gaussian in dB around the expected,
//! shadow-free link budget.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Point2, Point3};
use crate::rf;
use crate::scenario::{LedId, Scenario};

/// Layout `[p_x, p_y, v_x, v_y]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
}

impl StateVector {
    pub const fn new(px: f64, py: f64, vx: f64, vy: f64) -> Self {
        Self { px, py, vx, vy }
    }

    pub fn at_rest(p: Point2) -> Self {
        Self::new(p.x, p.y, 0.0, 0.0)
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.px, self.py)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.px, self.py, self.vx, self.vy]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// White-noise acceleration: `x[k+1] = F x[k] + G w[k]`, `w ~ N(0, σ_w² I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionModel {
    pub sample_interval: f64,
    pub process_noise_std: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self { sample_interval: 0.2, process_noise_std: 1.0 }
    }
}

impl MotionModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(invalid("sample_interval", "must be positive"));
        }
        if !(self.process_noise_std >= 0.0 && self.process_noise_std.is_finite()) {
            return Err(invalid("process_noise_std", "must be non-negative"));
        }
        Ok(())
    }

    pub fn transition(&self) -> [[f64; 4]; 4] {
        let t = self.sample_interval;
        [[1.0, 0.0, t, 0.0], [0.0, 1.0, 0.0, t], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    }

    pub fn noise_gain(&self) -> [[f64; 2]; 4] {
        let t = self.sample_interval;
        let h = 0.5 * t * t;
        [[h, 0.0], [0.0, h], [t, 0.0], [0.0, t]]
    }

    /// Propagates one state with acceleration noise `w`.
    pub fn propagate(&self, x: StateVector, w: [f64; 2]) -> StateVector {
        let f = self.transition();
        let g = self.noise_gain();
        let a = x.to_array();
        let mut out = [0.0; 4];
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..4).map(|c| f[r][c] * a[c]).sum::<f64>() + g[r][0] * w[0] + g[r][1] * w[1];
        }
        StateVector::from_array(out)
    }
}

/// One epoch's report: decoded cell ids and, when anything was decoded,
/// the backscatter RSS in dBm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub ids: BTreeSet<LedId>,
    pub rss_db: Option<f64>,
}

impl Measurement {
    pub fn new(ids: BTreeSet<LedId>, rss_db: Option<f64>) -> Self {
        let rss_db = if ids.is_empty() { None } else { rss_db.filter(|v| v.is_finite()) };
        Self { ids, rss_db }
    }

    pub fn empty() -> Self {
        Self::default()
    }
}

/// Precomputed per-scenario constants for evaluating predicted
/// measurements at many particle positions.
#[derive(Clone, Debug)]
pub struct MeasurementModel {
    leds: Vec<(Point3, f64, f64)>,
    ids: Vec<LedId>,
    r2: f64,
    fov_tan: Option<f64>,
    height: f64,
    rfs: Point3,
    reader: Point3,
    f_ghz: f64,
    rss_offset_db: f64,
}

impl MeasurementModel {
    pub fn new(scenario: &Scenario) -> Self {
        let dev = &scenario.device;
        let fov = dev.fov_semi_angle_deg.to_radians();
        let leds = scenario
            .leds
            .iter()
            .map(|l| {
                let nu = l.lambertian_index();
                let k = dev.responsivity * l.optical_power_factor * l.modulation_amplitude * (nu + 1.0) * dev.pd_area
                    / (2.0 * std::f64::consts::PI);
                (l.position, nu, k)
            })
            .collect();
        let r = scenario.cell_radius();
        Self {
            leds,
            ids: scenario.ids(),
            r2: r * r,
            fov_tan: (fov < std::f64::consts::FRAC_PI_2).then(|| fov.tan()),
            height: dev.height,
            rfs: scenario.rfs,
            reader: scenario.reader,
            f_ghz: scenario.rf.carrier_freq_ghz,
            rss_offset_db: scenario.rf.carrier_power_dbm + rf::link_gain_db(scenario),
        }
    }

    /// Bit `i` set when `p` lies in the cell of LED `i`.
    pub fn coverage_mask(&self, p: Point2) -> u64 {
        let mut mask = 0;
        for (i, (c, _, _)) in self.leds.iter().enumerate() {
            if c.xy().distance_sq(p) <= self.r2 {
                mask |= 1 << i;
            }
        }
        mask
    }

    pub fn mask_of(&self, ids: &BTreeSet<LedId>) -> u64 {
        self.ids.iter().enumerate().filter(|(_, id)| ids.contains(id)).fold(0, |m, (i, _)| m | (1 << i))
    }

    pub fn ids_of_mask(&self, mask: u64) -> BTreeSet<LedId> {
        self.ids.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &id)| id).collect()
    }

    /// Expected shadow-free RSS in dBm, `None` where no LED is seen.
    pub fn rss_db(&self, p: Point2) -> Option<f64> {
        let pose = p.with_z(self.height);
        let mut i2 = 0.0;
        for &(c, nu, k) in &self.leds {
            let dz = c.z - pose.z;
            if dz <= 0.0 {
                continue;
            }
            let rho2 = c.xy().distance_sq(p);
            if let Some(t) = self.fov_tan {
                if rho2 > dz * dz * t * t {
                    continue;
                }
            }
            let d2 = rho2 + dz * dz;
            if d2 == 0.0 {
                continue;
            }
            let cos = dz / d2.sqrt();
            let a = k / d2 * cos.powf(nu + 1.0);
            i2 += a * a;
        }
        if !(i2 > 0.0) {
            return None;
        }
        let loss = |a: Point3| {
            let d3 = a.distance(pose).max(1.0);
            rf::expected_pathloss_db(d3, a.horizontal_distance(pose), self.f_ghz).expect("distance clamped into range")
        };
        Some(self.rss_offset_db + 10.0 * i2.log10() - loss(self.rfs) - loss(self.reader))
    }

    pub fn predict(&self, p: Point2) -> (BTreeSet<LedId>, Option<f64>) {
        (self.ids_of_mask(self.coverage_mask(p)), self.rss_db(p))
    }
}

/// Predicted id set and RSS for a single position.
pub fn predict_measurement(p: Point2, scenario: &Scenario) -> (BTreeSet<LedId>, Option<f64>) {
    let ids = crate::scenario::cells_covering(p, scenario);
    let rss = rf::expected_rss_db(scenario, p);
    (ids, rss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitStrategy {
    /// Positions uniform over the room, velocities `N(0, velocity_std²)`.
    UniformRoom { velocity_std: f64 },
    /// `N(mean, diag(variances))` over `[p_x, p_y, v_x, v_y]`.
    Gaussian { mean: [f64; 4], variances: [f64; 4] },
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::UniformRoom { velocity_std: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub num_particles: usize,
    pub motion: MotionModel,
    /// σ_v of the RSS measurement noise, dB.
    pub rss_noise_std_db: f64,
    pub init: InitStrategy,
    /// Resample only when the effective sample size drops below this
    /// fraction of N_p. `None` resamples every step.
    pub ess_threshold: Option<f64>,
    /// Parallelise prediction and weighting within one filter.
    pub parallel: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            num_particles: 5000,
            motion: MotionModel::default(),
            rss_noise_std_db: 5.0,
            init: InitStrategy::default(),
            ess_threshold: None,
            parallel: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_particles == 0 {
            return Err(invalid("num_particles", "must be at least 1"));
        }
        self.motion.validate()?;
        if !(self.rss_noise_std_db > 0.0 && self.rss_noise_std_db.is_finite()) {
            return Err(invalid("rss_noise_std_db", "must be positive"));
        }
        match &self.init {
            InitStrategy::UniformRoom { velocity_std } if !(*velocity_std >= 0.0) => {
                return Err(invalid("init.velocity_std", "must be non-negative"))
            }
            InitStrategy::Gaussian { mean, variances }
                if !mean.iter().all(|v| v.is_finite()) || !variances.iter().all(|v| *v >= 0.0 && v.is_finite()) =>
            {
                return Err(invalid("init", "mean must be finite and variances non-negative"))
            }
            _ => {}
        }
        if let Some(t) = self.ess_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid("ess_threshold", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<StateVector>,
    pub weights: Vec<f64>,
}

impl ParticleSet {
    pub fn uniform(particles: Vec<StateVector>) -> Self {
        let n = particles.len();
        Self { particles, weights: vec![1.0 / n as f64; n] }
    }

    pub fn initialize<R: Rng + ?Sized>(n: usize, init: &InitStrategy, scenario: &Scenario, rng: &mut R) -> Self {
        let particles = match init {
            InitStrategy::UniformRoom { velocity_std } => (0..n)
                .map(|_| {
                    let px = rng.random::<f64>() * scenario.room.width;
                    let py = rng.random::<f64>() * scenario.room.length;
                    let vx: f64 = rng.sample::<f64, _>(StandardNormal) * velocity_std;
                    let vy: f64 = rng.sample::<f64, _>(StandardNormal) * velocity_std;
                    StateVector::new(px, py, vx, vy)
                })
                .collect(),
            InitStrategy::Gaussian { mean, variances } => (0..n)
                .map(|_| {
                    let mut a = *mean;
                    for (v, var) in a.iter_mut().zip(variances) {
                        *v += rng.sample::<f64, _>(StandardNormal) * var.sqrt();
                    }
                    StateVector::from_array(a)
                })
                .collect(),
        };
        Self::uniform(particles)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Propagates every particle with an independent acceleration draw.
/// Draws are taken sequentially so the result does not depend on
/// `parallel`.
pub fn predict<R: Rng + ?Sized>(set: &mut ParticleSet, motion: &MotionModel, rng: &mut R, parallel: bool) {
    let s = motion.process_noise_std;
    let draws: Vec<[f64; 2]> = if s > 0.0 {
        let n = Normal::new(0.0, s).expect("validated sigma");
        (0..set.len()).map(|_| [n.sample(rng), n.sample(rng)]).collect()
    } else {
        vec![[0.0; 2]; set.len()]
    };
    let step = |(x, w): (&mut StateVector, &[f64; 2])| *x = motion.propagate(*x, *w);
    if parallel {
        set.particles.par_iter_mut().zip(draws.par_iter()).for_each(step);
    } else {
        set.particles.iter_mut().zip(draws.iter()).for_each(step);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Normalized,
    /// Every weight came out zero; the set was left untouched for the
    /// caller to rescue.
    Collapsed,
}

fn likelihood(model: &MeasurementModel, p: Point2, measured: u64, m: &Measurement, r_v: f64) -> f64 {
    let predicted = model.coverage_mask(p);
    let matched = if measured == 0 && m.ids.is_empty() { predicted == 0 } else { predicted & measured != 0 };
    if !matched {
        return 0.0;
    }
    match (m.rss_db, predicted != 0) {
        (Some(r), true) => match model.rss_db(p) {
            Some(pred) => (-(r - pred).powi(2) / (2.0 * r_v)).exp(),
            None => 0.0,
        },
        _ => 1.0,
    }
}

/// Multiplies weights by the id and RSS likelihoods and normalizes.
/// `r_v` is the RSS noise variance in dB².
pub fn update_weights(
    set: &mut ParticleSet,
    measurement: &Measurement,
    model: &MeasurementModel,
    r_v: f64,
    parallel: bool,
) -> UpdateOutcome {
    let measured = model.mask_of(&measurement.ids);
    let f = |(x, w): (&StateVector, &f64)| w * likelihood(model, x.position(), measured, measurement, r_v);
    let new: Vec<f64> = if parallel {
        set.particles.par_iter().zip(set.weights.par_iter()).map(f).collect()
    } else {
        set.particles.iter().zip(set.weights.iter()).map(f).collect()
    };
    let total: f64 = new.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return UpdateOutcome::Collapsed;
    }
    set.weights = new.into_iter().map(|w| w / total).collect();
    UpdateOutcome::Normalized
}

/// Redraws positions uniformly inside the union of the measured cells
/// (clipped to the room), or over the whole room when nothing was
/// measured. Velocities are kept and weights reset to uniform.
pub fn rescue<R: Rng + ?Sized>(set: &mut ParticleSet, measurement: &Measurement, scenario: &Scenario, rng: &mut R) {
    let r = scenario.cell_radius();
    let discs: Vec<Point2> =
        measurement.ids.iter().filter_map(|&id| scenario.led(id)).map(|l| l.position.xy()).collect();
    let room = scenario.room;
    let (lo, hi) = if discs.is_empty() {
        (Point2::new(0.0, 0.0), Point2::new(room.width, room.length))
    } else {
        let lo = discs.iter().fold(Point2::new(f64::INFINITY, f64::INFINITY), |a, c| Point2::new(a.x.min(c.x - r), a.y.min(c.y - r)));
        let hi = discs
            .iter()
            .fold(Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, c| Point2::new(a.x.max(c.x + r), a.y.max(c.y + r)));
        let lo = Point2::new(lo.x.max(0.0), lo.y.max(0.0));
        let hi = Point2::new(hi.x.min(room.width), hi.y.min(room.length));
        if lo.x < hi.x && lo.y < hi.y {
            (lo, hi)
        } else {
            (Point2::new(0.0, 0.0), Point2::new(room.width, room.length))
        }
    };
    let inside = |p: Point2| discs.is_empty() || discs.iter().any(|c| c.distance_sq(p) <= r * r);
    for x in &mut set.particles {
        let mut p = Point2::new(lo.x + rng.random::<f64>() * (hi.x - lo.x), lo.y + rng.random::<f64>() * (hi.y - lo.y));
        for _ in 0..64 {
            if inside(p) {
                break;
            }
            p = Point2::new(lo.x + rng.random::<f64>() * (hi.x - lo.x), lo.y + rng.random::<f64>() * (hi.y - lo.y));
        }
        x.px = p.x;
        x.py = p.y;
    }
    let n = set.len();
    set.weights = vec![1.0 / n as f64; n];
}

/// Offspring parent indices for systematic resampling with offset
/// `u ∈ [0, 1)`. Parent `i` appears within one of `n·w_i` times.
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for j in 0..n {
        let target = (j as f64 + u) / n as f64;
        while i + 1 < n && cum + weights[i] <= target {
            cum += weights[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

pub fn resample<R: Rng + ?Sized>(set: &mut ParticleSet, rng: &mut R) {
    let idx = systematic_indices(&set.weights, rng.random::<f64>());
    set.particles = idx.iter().map(|&i| set.particles[i]).collect();
    let n = set.len();
    set.weights = vec![1.0 / n as f64; n];
}

/// Weighted mean state.
pub fn estimate(set: &ParticleSet) -> StateVector {
    let mut a = [0.0; 4];
    for (x, w) in set.particles.iter().zip(&set.weights) {
        for (s, v) in a.iter_mut().zip(x.to_array()) {
            *s += w * v;
        }
    }
    StateVector::from_array(a)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub estimate: StateVector,
    pub rescued: bool,
    pub resampled: bool,
    pub effective_sample_size: f64,
}

pub struct ParticleFilter {
    config: TrackerConfig,
    model: MeasurementModel,
    set: ParticleSet,
    rng: ChaCha8Rng,
    rescues: usize,
}

impl ParticleFilter {
    pub fn new(config: TrackerConfig, scenario: &Scenario, seed: u64) -> Result<Self> {
        Self::with_rng(config, scenario, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(config: TrackerConfig, scenario: &Scenario, mut rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let set = ParticleSet::initialize(config.num_particles, &config.init, scenario, &mut rng);
        Ok(Self { model: MeasurementModel::new(scenario), config, set, rng, rescues: 0 })
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.set
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn rescues(&self) -> usize {
        self.rescues
    }

    pub fn step(&mut self, measurement: &Measurement, scenario: &Scenario) -> StepReport {
        let par = self.config.parallel;
        predict(&mut self.set, &self.config.motion, &mut self.rng, par);
        let r_v = self.config.rss_noise_std_db.powi(2);
        let rescued = match update_weights(&mut self.set, measurement, &self.model, r_v, par) {
            UpdateOutcome::Normalized => false,
            UpdateOutcome::Collapsed => {
                log::debug!("all particle weights vanished for ids {:?}; reinitialising", measurement.ids);
                rescue(&mut self.set, measurement, scenario, &mut self.rng);
                self.rescues += 1;
                true
            }
        };
        let ess = self.set.effective_sample_size();
        let resampled = match self.config.ess_threshold {
            None => true,
            Some(t) => ess < t * self.set.len() as f64,
        };
        if resampled {
            resample(&mut self.set, &mut self.rng);
        }
        StepReport { estimate: estimate(&self.set), rescued, resampled, effective_sample_size: ess }
    }
}
