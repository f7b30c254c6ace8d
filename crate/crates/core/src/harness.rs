//! Monte-Carlo tracking experiments: trajectories, measurement
//! synthesis at two fidelities, metrics and text exports.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Point2;
use crate::receiver::{Receiver, ReceiverSpec};
use crate::rf::{self, PathLossMode};
use crate::scenario::{cells_covering, Room, Scenario, ScenarioConfig};
use crate::tracker::{Measurement, ParticleFilter, TrackerConfig};
use crate::vlc;
use crate::waveform::{self, Comparator};

/// Constant-speed poses sampled every `sample_interval` along a polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Point2>,
    pub speed: f64,
    pub sample_interval: f64,
    pub poses: Vec<Point2>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].distance(w[1])).sum()
    }
}

pub fn generate_trajectory(waypoints: &[Point2], speed: f64, sample_interval: f64, room: &Room) -> Result<Trajectory> {
    if waypoints.len() < 2 {
        return Err(invalid("waypoints", "need at least two"));
    }
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(invalid("speed", "must be positive"));
    }
    if !(sample_interval > 0.0 && sample_interval.is_finite()) {
        return Err(invalid("sample_interval", "must be positive"));
    }
    if let Some(p) = waypoints.iter().find(|p| !p.is_finite() || !room.contains(**p)) {
        return Err(Error::WaypointOutsideRoom { x: p.x, y: p.y });
    }
    let seg: Vec<f64> = waypoints.windows(2).map(|w| w[0].distance(w[1])).collect();
    let total: f64 = seg.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateTrajectory);
    }
    let duration = total / speed;
    let count = (duration / sample_interval + 1e-9).floor() as usize + 1;
    let mut poses = Vec::with_capacity(count);
    let mut i = 0;
    let mut start = 0.0;
    for k in 0..count {
        let s = (k as f64 * sample_interval * speed).min(total);
        while i + 1 < seg.len() && s > start + seg[i] {
            start += seg[i];
            i += 1;
        }
        let t = if seg[i] > 0.0 { ((s - start) / seg[i]).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (waypoints[i], waypoints[i + 1]);
        poses.push(Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
    }
    Ok(Trajectory { waypoints: waypoints.to_vec(), speed, sample_interval, poses })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub name: String,
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
}

impl PathSpec {
    pub fn points(&self) -> Vec<Point2> {
        self.waypoints.iter().map(|&[x, y]| Point2::new(x, y)).collect()
    }

    pub fn trajectory(&self, sample_interval: f64, room: &Room) -> Result<Trajectory> {
        generate_trajectory(&self.points(), self.speed, sample_interval, room)
    }
}

/// Two straight runs across the LED rows and two zigzags through the cell
/// overlaps of the reference room.
pub fn default_paths() -> Vec<PathSpec> {
    let p = |name: &str, pts: &[[f64; 2]], speed| PathSpec { name: name.into(), waypoints: pts.to_vec(), speed };
    vec![
        p("path-1", &[[0.1, 0.4], [2.4, 0.4]], 0.36),
        p("path-2", &[[1.2, 0.1], [1.2, 1.7]], 0.36),
        p("path-3", &[[0.2, 0.2], [0.6, 1.5], [1.0, 0.2], [1.4, 1.5], [1.8, 0.2], [2.2, 1.5]], 0.40),
        p("path-4", &[[0.4, 1.6], [0.8, 0.2], [1.2, 1.6], [1.6, 0.2], [2.0, 1.6]], 0.40),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    /// Ids from true coverage, RSS from the sampled link budget plus noise.
    Measurement,
    /// Full synthesis, backscatter and receiver chain per epoch.
    Waveform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub fidelity: Fidelity,
    pub pathloss: PathLossMode,
    /// Extra Gaussian RSS error in measurement fidelity, dB.
    pub rss_noise_std_db: f64,
    /// Reader observation window per epoch in waveform fidelity, s.
    pub window: f64,
    pub comparator: Comparator,
    /// Thermal noise at the reader in waveform fidelity.
    pub receiver_noise: bool,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            fidelity: Fidelity::Measurement,
            pathloss: PathLossMode::Sampled,
            rss_noise_std_db: 5.0,
            window: 0.04,
            comparator: Comparator::default(),
            receiver_noise: true,
        }
    }
}

/// Produces one measurement per trajectory pose.
pub fn simulate_measurements<R: Rng + ?Sized>(
    trajectory: &Trajectory,
    scenario: &Scenario,
    spec: &SimulationSpec,
    receiver: Option<&Receiver>,
    rng: &mut R,
) -> Result<Vec<Measurement>> {
    match spec.fidelity {
        Fidelity::Measurement => {
            let noise = (spec.rss_noise_std_db > 0.0).then(|| Normal::new(0.0, spec.rss_noise_std_db)).transpose().map_err(|e| invalid("rss_noise_std_db", e.to_string()))?;
            Ok(trajectory
                .poses
                .iter()
                .map(|&p| {
                    let ids = cells_covering(p, scenario);
                    if ids.is_empty() {
                        return Measurement::empty();
                    }
                    let i_ac = vlc::effective_ac_amplitude(&vlc::received_ac_amplitudes(scenario, p));
                    let rss = rf::backscatter_rss_db(scenario, p, i_ac, spec.pathloss, rng)
                        .map(|r| r + noise.map_or(0.0, |n| n.sample(rng)));
                    Measurement::new(ids, rss)
                })
                .collect())
        }
        Fidelity::Waveform => {
            let owned;
            let rx = match receiver {
                Some(r) => r,
                None => {
                    owned = Receiver::new(scenario, &ReceiverSpec::default())?;
                    &owned
                }
            };
            let len = (spec.window * scenario.modulation.sample_rate).round() as usize;
            let mut out = Vec::with_capacity(trajectory.len());
            for (k, &p) in trajectory.poses.iter().enumerate() {
                let offsets = waveform::random_offsets(scenario, rng);
                let epoch = k as f64 * trajectory.sample_interval;
                let y = waveform::reader_stream(
                    scenario,
                    p,
                    len,
                    &offsets,
                    epoch,
                    &spec.comparator,
                    spec.pathloss,
                    spec.receiver_noise,
                    rng,
                )?;
                let det = rx.detect(&y)?;
                let ids: BTreeSet<_> = det.iter().map(|d| d.led_id).collect();
                let rss = det.iter().find_map(|d| d.rss_db);
                out.push(Measurement::new(ids, rss));
            }
            Ok(out)
        }
    }
}

/// Nearest-rank percentile of `values`, `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Step points `(x, F(x))` of the empirical CDF, one per sorted sample.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub rmse: f64,
    pub mae_x: f64,
    pub mae_y: f64,
    /// Euclidean error per step, m.
    pub errors: Vec<f64>,
    pub p50: f64,
    pub p90: f64,
}

impl RunMetrics {
    pub fn new(truth: &[Point2], estimates: &[Point2]) -> Self {
        assert_eq!(truth.len(), estimates.len(), "truth and estimate lengths differ");
        let n = truth.len().max(1) as f64;
        let errors: Vec<f64> = truth.iter().zip(estimates).map(|(t, e)| t.distance(*e)).collect();
        let mae_x = truth.iter().zip(estimates).map(|(t, e)| (t.x - e.x).abs()).sum::<f64>() / n;
        let mae_y = truth.iter().zip(estimates).map(|(t, e)| (t.y - e.y).abs()).sum::<f64>() / n;
        Self {
            rmse: rmse_of(&errors),
            mae_x,
            mae_y,
            p50: percentile(&errors, 0.5),
            p90: percentile(&errors, 0.9),
            errors,
        }
    }
}

pub fn rmse_of(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len().max(1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub truth: Point2,
    pub estimate: Point2,
    pub measurement: Measurement,
    pub rescued: bool,
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub metrics: RunMetrics,
    pub trace: Vec<TraceRow>,
    pub rescues: usize,
}

/// Tracks one trajectory. Two independent streams are drawn from `seed`,
/// one for the world and one for the filter.
pub fn run_trial(
    scenario: &Scenario,
    trajectory: &Trajectory,
    tracker: &TrackerConfig,
    sim: &SimulationSpec,
    receiver: Option<&Receiver>,
    seed: u64,
) -> Result<TrialResult> {
    let mut world = ChaCha8Rng::seed_from_u64(seed);
    world.set_stream(0);
    let mut filter_rng = ChaCha8Rng::seed_from_u64(seed);
    filter_rng.set_stream(1);
    let measurements = simulate_measurements(trajectory, scenario, sim, receiver, &mut world)?;
    let mut pf = ParticleFilter::with_rng(tracker.clone(), scenario, filter_rng)?;
    let mut trace = Vec::with_capacity(trajectory.len());
    for (k, (&truth, m)) in trajectory.poses.iter().zip(&measurements).enumerate() {
        let r = pf.step(m, scenario);
        trace.push(TraceRow { k, truth, estimate: r.estimate.position(), measurement: m.clone(), rescued: r.rescued });
    }
    let est: Vec<Point2> = trace.iter().map(|r| r.estimate).collect();
    Ok(TrialResult { metrics: RunMetrics::new(&trajectory.poses, &est), trace, rescues: pf.rescues() })
}

/// Mixes a base seed with trial coordinates into an independent seed.
pub fn trial_seed(base: u64, path: usize, height: usize, rep: usize) -> u64 {
    let mut z = base ^ (path as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for v in [height as u64, rep as u64] {
        z = splitmix(z ^ v.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    splitmix(z)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub repetitions: usize,
    /// Device heights, m.
    pub heights: Vec<f64>,
    pub paths: Vec<PathSpec>,
    /// Keep per-step traces for every trial.
    pub keep_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { seed: 1, repetitions: 500, heights: vec![1.57], paths: default_paths(), keep_traces: false }
    }
}

/// Heights of the reference sweep, m.
pub fn sweep_heights() -> Vec<f64> {
    let mut h: Vec<f64> = (0..=7).map(|i| 1.0 + 0.1 * i as f64).collect();
    h.push(1.57);
    h.sort_by(f64::total_cmp);
    h
}

#[derive(Clone, Debug)]
pub struct TrialRecord {
    pub path: usize,
    pub path_name: String,
    pub height: f64,
    pub rep: usize,
    pub seed: u64,
    pub outcome: std::result::Result<TrialSummary, String>,
}

#[derive(Clone, Debug)]
pub struct TrialSummary {
    pub metrics: RunMetrics,
    pub rescues: usize,
    pub trace: Option<Vec<TraceRow>>,
}

#[derive(Clone, Debug)]
pub struct MonteCarloResult {
    /// Sorted by (height, path, rep).
    pub trials: Vec<TrialRecord>,
}

impl MonteCarloResult {
    pub fn successes(&self) -> impl Iterator<Item = (&TrialRecord, &TrialSummary)> {
        self.trials.iter().filter_map(|t| t.outcome.as_ref().ok().map(|s| (t, s)))
    }

    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| t.outcome.is_err()).count()
    }

    /// Every per-step error of the selected trials.
    pub fn pooled_errors(&self, mut keep: impl FnMut(&TrialRecord) -> bool) -> Vec<f64> {
        self.successes().filter(|(t, _)| keep(t)).flat_map(|(_, s)| s.metrics.errors.iter().copied()).collect()
    }

    /// Mean of per-trial RMSE and MAEs for the selected trials.
    pub fn mean_metrics(&self, mut keep: impl FnMut(&TrialRecord) -> bool) -> Option<Aggregate> {
        let sel: Vec<&RunMetrics> = self.successes().filter(|(t, _)| keep(t)).map(|(_, s)| &s.metrics).collect();
        if sel.is_empty() {
            return None;
        }
        let n = sel.len() as f64;
        let mean = |f: fn(&RunMetrics) -> f64| sel.iter().map(|m| f(m)).sum::<f64>() / n;
        let rmse = mean(|m| m.rmse);
        let var = sel.iter().map(|m| (m.rmse - rmse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Some(Aggregate { trials: sel.len(), rmse, rmse_std: var.sqrt(), mae_x: mean(|m| m.mae_x), mae_y: mean(|m| m.mae_y) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub trials: usize,
    pub rmse: f64,
    /// Sample standard deviation of per-trial RMSE.
    pub rmse_std: f64,
    pub mae_x: f64,
    pub mae_y: f64,
}

/// Runs every (height, path, repetition) trial in parallel.
pub fn run_monte_carlo(
    scenario: &Scenario,
    tracker: &TrackerConfig,
    sim: &SimulationSpec,
    receiver: &ReceiverSpec,
    exp: &ExperimentConfig,
) -> Result<MonteCarloResult> {
    if exp.paths.is_empty() || exp.heights.is_empty() {
        return Err(invalid("experiment", "needs at least one path and one height"));
    }
    let mut setups = Vec::new();
    for (hi, &h) in exp.heights.iter().enumerate() {
        let sc = scenario.with_device_height(h)?;
        let rx = match sim.fidelity {
            Fidelity::Waveform => Some(Receiver::new(&sc, receiver)?),
            Fidelity::Measurement => None,
        };
        let trajs = exp
            .paths
            .iter()
            .map(|p| p.trajectory(tracker.motion.sample_interval, &sc.room))
            .collect::<Result<Vec<_>>>()?;
        setups.push((hi, h, sc, rx, trajs));
    }
    let jobs: Vec<(usize, usize, usize)> = (0..setups.len())
        .flat_map(|s| (0..exp.paths.len()).flat_map(move |p| (0..exp.repetitions).map(move |r| (s, p, r))))
        .collect();
    let mut trials: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(s, p, rep)| {
            let (hi, h, sc, rx, trajs) = &setups[s];
            let seed = trial_seed(exp.seed, p, *hi, rep);
            let outcome = run_trial(sc, &trajs[p], tracker, sim, rx.as_ref(), seed)
                .map(|r| TrialSummary {
                    metrics: r.metrics,
                    rescues: r.rescues,
                    trace: exp.keep_traces.then_some(r.trace),
                })
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("trial path={} h={h} rep={rep} failed: {e}", exp.paths[p].name);
            }
            TrialRecord { path: p, path_name: exp.paths[p].name.clone(), height: *h, rep, seed, outcome }
        })
        .collect();
    trials.sort_by(|a, b| a.height.total_cmp(&b.height).then(a.path.cmp(&b.path)).then(a.rep.cmp(&b.rep)));
    Ok(MonteCarloResult { trials })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub height: f64,
    pub aggregate: Aggregate,
}

/// Aggregates across all paths at each height.
pub fn height_sweep(result: &MonteCarloResult, heights: &[f64]) -> Vec<SweepRow> {
    heights
        .iter()
        .filter_map(|&h| result.mean_metrics(|t| t.height == h).map(|aggregate| SweepRow { height: h, aggregate }))
        .collect()
}

/// Whole-run configuration as read from one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub receiver: ReceiverSpec,
    pub tracker: TrackerConfig,
    pub simulation: SimulationSpec,
    pub experiment: ExperimentConfig,
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn ids_field(ids: &BTreeSet<u8>) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

pub fn write_metrics_table<W: Write>(result: &MonteCarloResult, mut w: W) -> Result<()> {
    writeln!(w, "path,height,rep,seed,rmse,mae_x,mae_y,p50,p90,rescues,error")?;
    for t in &result.trials {
        match &t.outcome {
            Ok(s) => {
                let m = &s.metrics;
                writeln!(
                    w,
                    "{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{},",
                    t.path_name, t.height, t.rep, t.seed, m.rmse, m.mae_x, m.mae_y, m.p50, m.p90, s.rescues
                )?
            }
            Err(e) => writeln!(w, "{},{},{},{},,,,,,,\"{}\"", t.path_name, t.height, t.rep, t.seed, e.replace('"', "'"))?,
        }
    }
    Ok(())
}

pub fn write_trace<W: Write>(trace: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "k,truth_x,truth_y,est_x,est_y,error,ids,rss_db,rescued")?;
    for r in trace {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.9},{},{},{}",
            r.k,
            r.truth.x,
            r.truth.y,
            r.estimate.x,
            r.estimate.y,
            r.truth.distance(r.estimate),
            ids_field(&r.measurement.ids),
            opt(r.measurement.rss_db),
            r.rescued as u8
        )?;
    }
    Ok(())
}

pub fn write_cdf<W: Write>(errors: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "error,cdf")?;
    for (x, f) in empirical_cdf(errors) {
        writeln!(w, "{x:.9},{f:.9}")?;
    }
    Ok(())
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "height,trials,rmse,rmse_std,mae_x,mae_y")?;
    for r in rows {
        let a = r.aggregate;
        writeln!(w, "{},{},{:.9},{:.9},{:.9},{:.9}", r.height, a.trials, a.rmse, a.rmse_std, a.mae_x, a.mae_y)?;
    }
    Ok(())
}

/// Run manifest: command line, seed and the fully resolved config.
pub fn write_manifest<W: Write>(command: &str, seed: u64, config: &SimConfig, mut w: W) -> Result<()> {
    writeln!(w, "# command = {command}")?;
    writeln!(w, "# seed = {seed}")?;
    writeln!(w, "# version = {}", env!("CARGO_PKG_VERSION"))?;
    write!(w, "{}", config.to_toml_string())?;
    Ok(())
}
