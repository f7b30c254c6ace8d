//! Deployment geometry, VLC cell coverage and frequency-pair planning.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point2, Point3};
use crate::rf::RfLinkSpec;
use crate::waveform::ModulationSpec;

pub type LedId = u8;

/// Lowest tone allowed on an LED; anything slower flickers visibly.
pub const MIN_TONE_HZ: f64 = 2_000.0;

/// Nominal 10 dB bandwidth of the reader's tone filters.
pub const DEFAULT_TONE_BANDWIDTH_HZ: f64 = 500.0;

/// Two BFSK tones; bit 0 maps to `f1`, bit 1 to `f2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPair {
    pub f1: f64,
    pub f2: f64,
}

impl FrequencyPair {
    pub fn new(f1: f64, f2: f64) -> Result<Self> {
        let p = Self { f1, f2 };
        p.validate(0.0)?;
        Ok(p)
    }

    pub fn validate(&self, min_separation: f64) -> Result<()> {
        if !(self.f1.is_finite() && self.f2.is_finite()) || self.f1 <= 0.0 || self.f1 >= self.f2 {
            return Err(invalid("freq_pair", format!("need 0 < f1 < f2, got ({}, {})", self.f1, self.f2)));
        }
        if self.f1 < MIN_TONE_HZ {
            return Err(invalid("freq_pair", format!("tone {} Hz is below the {} Hz flicker limit", self.f1, MIN_TONE_HZ)));
        }
        if self.f2 - self.f1 < min_separation {
            return Err(invalid(
                "freq_pair",
                format!("separation {} Hz is narrower than the {} Hz filter bandwidth", self.f2 - self.f1, min_separation),
            ));
        }
        Ok(())
    }

    pub fn tone(&self, bit: bool) -> f64 {
        if bit {
            self.f2
        } else {
            self.f1
        }
    }
}

/// The four pairs of the reference deployment, in Hz.
pub fn default_palette() -> Vec<FrequencyPair> {
    [(8_254.0, 9_004.0), (10_074.0, 10_990.0), (11_918.0, 13_002.0), (13_742.0, 14_992.0)]
        .into_iter()
        .map(|(f1, f2)| FrequencyPair { f1, f2 })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedAp {
    pub id: LedId,
    pub position: Point3,
    /// Electro-optical conversion, W/A.
    pub optical_power_factor: f64,
    pub bias_current: f64,
    /// Peak modulating current s_max, A.
    pub modulation_amplitude: f64,
    pub semi_angle_deg: f64,
    pub freq_pair: FrequencyPair,
}

impl LedAp {
    /// Lambertian order from the half-power semi-angle.
    pub fn lambertian_index(&self) -> f64 {
        crate::vlc::lambertian_index(self.semi_angle_deg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSpec {
    pub height: f64,
    pub pd_area: f64,
    pub fov_semi_angle_deg: f64,
    /// Photodetector responsivity, A/W.
    pub responsivity: f64,
    pub fill_factor: f64,
    pub dark_current: f64,
    pub thermal_voltage: f64,
    pub antenna_gain_dbi: f64,
}

impl Default for DeviceSpec {
    fn default() -> Self {
        Self {
            height: 1.57,
            pd_area: 0.027 * 0.017,
            fov_semi_angle_deg: 60.0,
            responsivity: 0.5,
            fill_factor: 0.75,
            dark_current: 1e-9,
            thermal_voltage: 0.025,
            antenna_gain_dbi: 1.5,
        }
    }
}

impl DeviceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_semi_angle_deg > 0.0 && self.fov_semi_angle_deg <= 90.0) {
            return Err(invalid("fov_semi_angle_deg", "must lie in (0, 90]"));
        }
        if !(self.pd_area > 0.0) {
            return Err(invalid("pd_area", "must be positive"));
        }
        if !(self.fill_factor > 0.0 && self.fill_factor <= 1.0) {
            return Err(invalid("fill_factor", "must lie in (0, 1]"));
        }
        if !(self.responsivity > 0.0) {
            return Err(invalid("responsivity", "must be positive"));
        }
        if !(self.dark_current > 0.0) || !(self.thermal_voltage > 0.0) {
            return Err(invalid("dark_current", "dark current and thermal voltage must be positive"));
        }
        if !self.height.is_finite() || self.height < 0.0 {
            return Err(invalid("height", "must be a finite non-negative number"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub n0_dbm_hz: f64,
    pub bandwidth_hz: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { n0_dbm_hz: -174.0, bandwidth_hz: 50_000.0 }
    }
}

impl NoiseSpec {
    /// Total noise power N_0·B in dBm.
    pub fn power_dbm(&self) -> f64 {
        self.n0_dbm_hz + 10.0 * self.bandwidth_hz.log10()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Room {
    pub width: f64,
    pub length: f64,
}

impl Default for Room {
    fn default() -> Self {
        Self { width: 2.5, length: 2.5 }
    }
}

impl Room {
    pub fn contains(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.length
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.length))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairAssignment {
    /// Index into the palette for each LED, in declaration order.
    Explicit(Vec<usize>),
    Mode(AssignMode),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMode {
    /// Greedy coloring of the cell adjacency graph.
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedConfig {
    pub height: f64,
    pub ids: Vec<LedId>,
    /// Horizontal positions, m.
    pub positions: Vec<[f64; 2]>,
    pub optical_power_factor: f64,
    pub bias_current: f64,
    /// Defaults to half the bias current.
    pub modulation_amplitude: Option<f64>,
    pub semi_angle_deg: f64,
    /// Available BFSK pairs as [f1, f2] in Hz.
    pub palette: Vec<[f64; 2]>,
    pub pair_assignment: PairAssignment,
}

impl Default for LedConfig {
    fn default() -> Self {
        Self {
            height: 1.9,
            ids: (1..=6).collect(),
            positions: vec![[0.4, 0.4], [1.2, 0.4], [0.4, 1.2], [1.2, 1.2], [2.0, 0.4], [2.0, 1.2]],
            optical_power_factor: 2.1,
            bias_current: 0.75,
            modulation_amplitude: None,
            semi_angle_deg: 60.0,
            palette: default_palette().iter().map(|p| [p.f1, p.f2]).collect(),
            pair_assignment: PairAssignment::Explicit(vec![0, 1, 2, 3, 0, 2]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    pub rfs: [f64; 3],
    pub reader: [f64; 3],
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self { rfs: [1.2, -0.5, 1.5], reader: [1.2, 2.0, 1.5] }
    }
}

/// File-level description of a deployment. Every field has a default, so
/// an empty file yields the reference layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub room: Room,
    pub leds: LedConfig,
    pub device: DeviceSpec,
    pub nodes: NodeConfig,
    pub rf: RfLinkSpec,
    pub noise: NoiseSpec,
    pub modulation: ModulationSpec,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config is always serializable")
    }
}

/// Immutable deployment description shared by every other module.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub room: Room,
    pub leds: Vec<LedAp>,
    pub led_height: f64,
    pub device: DeviceSpec,
    pub rfs: Point3,
    pub reader: Point3,
    pub rf: RfLinkSpec,
    pub noise: NoiseSpec,
    pub modulation: ModulationSpec,
    palette: Vec<FrequencyPair>,
    cell_radius: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::from_config(&ScenarioConfig::default()).expect("reference scenario is valid")
    }
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let lc = &cfg.leds;
        if lc.ids.is_empty() {
            return Err(invalid("leds.ids", "at least one LED is required"));
        }
        if lc.ids.len() > 64 {
            return Err(invalid("leds.ids", "at most 64 LEDs are supported"));
        }
        if lc.positions.len() != lc.ids.len() {
            return Err(invalid("leds.positions", format!("{} positions for {} ids", lc.positions.len(), lc.ids.len())));
        }
        let unique: BTreeSet<_> = lc.ids.iter().collect();
        if unique.len() != lc.ids.len() {
            return Err(invalid("leds.ids", "ids must be unique"));
        }
        if !(lc.semi_angle_deg > 0.0 && lc.semi_angle_deg < 90.0) {
            return Err(invalid("leds.semi_angle_deg", "must lie in (0, 90)"));
        }
        if !(lc.bias_current > 0.0) || !(lc.optical_power_factor > 0.0) {
            return Err(invalid("leds.bias_current", "bias current and optical power factor must be positive"));
        }
        let s_max = lc.modulation_amplitude.unwrap_or(0.5 * lc.bias_current);
        if !(s_max > 0.0 && s_max <= lc.bias_current) {
            return Err(invalid("leds.modulation_amplitude", "must lie in (0, bias_current] to avoid clipping"));
        }
        if !(cfg.room.width > 0.0 && cfg.room.length > 0.0) {
            return Err(invalid("room", "dimensions must be positive"));
        }
        cfg.device.validate()?;
        if lc.height <= cfg.device.height {
            return Err(Error::CellUndefined { h_led: lc.height, h_bd: cfg.device.height });
        }

        let palette: Vec<FrequencyPair> = lc.palette.iter().map(|&[f1, f2]| FrequencyPair { f1, f2 }).collect();
        if palette.is_empty() {
            return Err(invalid("leds.palette", "palette is empty"));
        }
        for p in &palette {
            p.validate(DEFAULT_TONE_BANDWIDTH_HZ)?;
        }

        let mut leds = Vec::with_capacity(lc.ids.len());
        for (&id, &[x, y]) in lc.ids.iter().zip(&lc.positions) {
            let xy = Point2::new(x, y);
            if !xy.is_finite() || !cfg.room.contains(xy) {
                return Err(invalid("leds.positions", format!("LED {id} at ({x}, {y}) lies outside the room")));
            }
            leds.push(LedAp {
                id,
                position: xy.with_z(lc.height),
                optical_power_factor: lc.optical_power_factor,
                bias_current: lc.bias_current,
                modulation_amplitude: s_max,
                semi_angle_deg: lc.semi_angle_deg,
                freq_pair: palette[0],
            });
        }

        let radius = cell_radius(lc.height, cfg.device.height, cfg.device.fov_semi_angle_deg)?;
        match &lc.pair_assignment {
            PairAssignment::Explicit(idx) => {
                if idx.len() != leds.len() {
                    return Err(invalid("leds.pair_assignment", format!("{} entries for {} LEDs", idx.len(), leds.len())));
                }
                for (led, &i) in leds.iter_mut().zip(idx) {
                    led.freq_pair = *palette
                        .get(i)
                        .ok_or_else(|| invalid("leds.pair_assignment", format!("palette index {i} out of range")))?;
                }
            }
            PairAssignment::Mode(AssignMode::Auto) => {
                let graph = CellGraph::from_leds(&leds, radius);
                let map = assign_frequency_pairs(&graph, &palette)?;
                for led in &mut leds {
                    led.freq_pair = map[&led.id];
                }
            }
        }

        let [rx, ry, rz] = cfg.nodes.rfs;
        let [dx, dy, dz] = cfg.nodes.reader;
        let rfs = Point3::new(rx, ry, rz);
        let reader = Point3::new(dx, dy, dz);
        if ![rx, ry, rz, dx, dy, dz].iter().all(|v| v.is_finite()) {
            return Err(invalid("nodes", "RF node positions must be finite"));
        }
        cfg.rf.validate()?;
        if !(cfg.noise.bandwidth_hz > 0.0) || !cfg.noise.n0_dbm_hz.is_finite() {
            return Err(invalid("noise", "bandwidth must be positive and N_0 finite"));
        }
        cfg.modulation.validate()?;
        let max_tone = palette.iter().map(|p| p.f2).fold(0.0, f64::max);
        if cfg.modulation.sample_rate < 2.0 * max_tone {
            return Err(Error::SampleRateTooLow { rate: cfg.modulation.sample_rate, required: 2.0 * max_tone });
        }

        let sc = Self {
            room: cfg.room,
            leds,
            led_height: lc.height,
            device: cfg.device.clone(),
            rfs,
            reader,
            rf: cfg.rf.clone(),
            noise: cfg.noise,
            modulation: cfg.modulation.clone(),
            palette,
            cell_radius: radius,
        };
        for (a, b) in sc.pair_conflicts() {
            log::warn!("adjacent LEDs {a} and {b} share a frequency pair");
        }
        for a in &sc.leds {
            for alias in crate::waveform::frame_aliases(a.id) {
                if sc.leds.iter().any(|b| b.id == alias && b.freq_pair == a.freq_pair && alias > a.id) {
                    log::warn!("LEDs {} and {alias} share a frequency pair and their repeated frames are rotations of each other", a.id);
                }
            }
        }
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_config(&ScenarioConfig::load(path)?)
    }

    /// Resolved configuration; frequency pairs are written out explicitly.
    pub fn to_config(&self) -> ScenarioConfig {
        let first = &self.leds[0];
        let assignment = self
            .leds
            .iter()
            .map(|l| self.palette.iter().position(|p| *p == l.freq_pair).expect("pair comes from palette"))
            .collect();
        ScenarioConfig {
            room: self.room,
            leds: LedConfig {
                height: self.led_height,
                ids: self.leds.iter().map(|l| l.id).collect(),
                positions: self.leds.iter().map(|l| [l.position.x, l.position.y]).collect(),
                optical_power_factor: first.optical_power_factor,
                bias_current: first.bias_current,
                modulation_amplitude: Some(first.modulation_amplitude),
                semi_angle_deg: first.semi_angle_deg,
                palette: self.palette.iter().map(|p| [p.f1, p.f2]).collect(),
                pair_assignment: PairAssignment::Explicit(assignment),
            },
            device: self.device.clone(),
            nodes: NodeConfig {
                rfs: [self.rfs.x, self.rfs.y, self.rfs.z],
                reader: [self.reader.x, self.reader.y, self.reader.z],
            },
            rf: self.rf.clone(),
            noise: self.noise,
            modulation: self.modulation.clone(),
        }
    }

    /// Same deployment with the device carried at a different height.
    pub fn with_device_height(&self, h_bd: f64) -> Result<Self> {
        let mut cfg = self.to_config();
        cfg.device.height = h_bd;
        Self::from_config(&cfg)
    }

    pub fn cell_radius(&self) -> f64 {
        self.cell_radius
    }

    pub fn palette(&self) -> &[FrequencyPair] {
        &self.palette
    }

    pub fn led(&self, id: LedId) -> Option<&LedAp> {
        self.leds.iter().find(|l| l.id == id)
    }

    pub fn led_index(&self, id: LedId) -> Option<usize> {
        self.leds.iter().position(|l| l.id == id)
    }

    pub fn ids(&self) -> Vec<LedId> {
        self.leds.iter().map(|l| l.id).collect()
    }

    pub fn device_pose(&self, p: Point2) -> Point3 {
        p.with_z(self.device.height)
    }

    /// Bit `i` is set when the point lies in the cell of `self.leds[i]`.
    pub fn coverage_mask(&self, p: Point2) -> u64 {
        let r2 = self.cell_radius * self.cell_radius;
        let mut mask = 0u64;
        for (i, led) in self.leds.iter().enumerate() {
            if led.position.xy().distance_sq(p) <= r2 {
                mask |= 1 << i;
            }
        }
        mask
    }

    pub fn mask_of(&self, ids: &BTreeSet<LedId>) -> u64 {
        ids.iter().filter_map(|&id| self.led_index(id)).fold(0, |m, i| m | (1 << i))
    }

    pub fn ids_of_mask(&self, mask: u64) -> BTreeSet<LedId> {
        self.leds.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, l)| l.id).collect()
    }

    /// Adjacent cell pairs that were given the same frequency pair.
    pub fn pair_conflicts(&self) -> Vec<(LedId, LedId)> {
        let g = CellGraph::from_leds(&self.leds, self.cell_radius);
        g.edges()
            .filter(|&(a, b)| self.leds[a].freq_pair == self.leds[b].freq_pair)
            .map(|(a, b)| (self.leds[a].id, self.leds[b].id))
            .collect()
    }
}

/// Radius of the floor-plane disc inside which an LED is visible to an
/// upward-facing photodetector.
pub fn cell_radius(h_led: f64, h_bd: f64, fov_deg: f64) -> Result<f64> {
    if !(h_led.is_finite() && h_bd.is_finite()) || h_led <= h_bd {
        return Err(Error::CellUndefined { h_led, h_bd });
    }
    if !(0.0..90.0).contains(&fov_deg) {
        return Err(invalid("fov", format!("{fov_deg} deg is outside [0, 90)")));
    }
    Ok((h_led - h_bd) * fov_deg.to_radians().tan())
}

/// Ids of every LED whose cell contains `p`.
pub fn cells_covering(p: Point2, scenario: &Scenario) -> BTreeSet<LedId> {
    scenario.ids_of_mask(scenario.coverage_mask(p))
}

/// Undirected graph over cells; vertex order is the LED order.
#[derive(Clone, Debug, Default)]
pub struct CellGraph {
    ids: Vec<LedId>,
    adj: Vec<BTreeSet<usize>>,
}

impl CellGraph {
    pub fn new(ids: Vec<LedId>) -> Self {
        let n = ids.len();
        Self { ids, adj: vec![BTreeSet::new(); n] }
    }

    /// Cells are adjacent when their discs intersect or touch.
    pub fn from_discs(centers: &[(LedId, Point2)], radius: f64) -> Self {
        let mut g = Self::new(centers.iter().map(|c| c.0).collect());
        let reach = 2.0 * radius;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if centers[i].1.distance(centers[j].1) <= reach {
                    g.add_edge(i, j);
                }
            }
        }
        g
    }

    pub fn from_leds(leds: &[LedAp], radius: f64) -> Self {
        let c: Vec<_> = leds.iter().map(|l| (l.id, l.position.xy())).collect();
        Self::from_discs(&c, radius)
    }

    pub fn complete(ids: Vec<LedId>) -> Self {
        let n = ids.len();
        let mut g = Self::new(ids);
        for i in 0..n {
            for j in i + 1..n {
                g.add_edge(i, j);
            }
        }
        g
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adj[a].insert(b);
            self.adj[b].insert(a);
        }
    }

    pub fn ids(&self) -> &[LedId] {
        &self.ids
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].iter().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.iter().enumerate().flat_map(|(a, nb)| nb.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Proper coloring of the cell graph with palette entries.
///
/// Cells are visited in ascending id order and take the lowest palette index
/// not used by an already-colored neighbour; dead ends backtrack.
pub fn assign_frequency_pairs(graph: &CellGraph, palette: &[FrequencyPair]) -> Result<BTreeMap<LedId, FrequencyPair>> {
    let n = graph.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| graph.ids[v]);
    let mut color: Vec<Option<usize>> = vec![None; n];
    let mut deepest = 0;

    fn solve(
        pos: usize,
        order: &[usize],
        graph: &CellGraph,
        k: usize,
        color: &mut [Option<usize>],
        deepest: &mut usize,
    ) -> bool {
        if pos == order.len() {
            return true;
        }
        *deepest = (*deepest).max(pos);
        let v = order[pos];
        for c in 0..k {
            if graph.neighbors(v).any(|u| color[u] == Some(c)) {
                continue;
            }
            color[v] = Some(c);
            if solve(pos + 1, order, graph, k, color, deepest) {
                return true;
            }
            color[v] = None;
        }
        false
    }

    if !solve(0, &order, graph, palette.len(), &mut color, &mut deepest) {
        return Err(Error::Uncolorable { palette: palette.len(), led: graph.ids[order[deepest]] });
    }
    Ok(order.iter().map(|&v| (graph.ids[v], palette[color[v].expect("all colored")])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radii_for_reference_heights() {
        let r = |h| cell_radius(1.9, h, 60.0).unwrap();
        assert!((r(1.40) - 0.866).abs() < 5e-4);
        assert!((r(1.57) - 0.5716).abs() < 5e-4);
        assert!((r(1.70) - 0.346).abs() < 5e-4);
        assert_eq!(cell_radius(1.9, 1.0, 0.0).unwrap(), 0.0);
        assert!(matches!(cell_radius(1.5, 1.5, 60.0), Err(Error::CellUndefined { .. })));
        assert!(cell_radius(1.9, 1.0, 90.0).is_err());
    }

    #[test]
    fn coverage_examples() {
        let sc = Scenario::default();
        assert_eq!(cells_covering(Point2::new(0.4, 0.4), &sc), BTreeSet::from([1]));
        assert_eq!(cells_covering(Point2::new(0.8, 0.4), &sc), BTreeSet::from([1, 2]));
        assert!(cells_covering(Point2::new(2.5, 2.5), &sc).is_empty());
    }

    #[test]
    fn reference_coloring_reuses_pairs() {
        let sc = Scenario::default();
        let g = CellGraph::from_leds(&sc.leds, sc.cell_radius());
        let map = assign_frequency_pairs(&g, &default_palette()).unwrap();
        assert_eq!(map[&5], map[&1]);
        assert_eq!(map[&6], map[&3]);
        for (id, led) in sc.leds.iter().map(|l| (l.id, l)) {
            assert_eq!(map[&id], led.freq_pair, "LED {id}");
        }
        assert!(sc.pair_conflicts().is_empty());
    }

    #[test]
    fn k5_needs_five_colors() {
        let g = CellGraph::complete((1..=5).collect());
        assert!(matches!(assign_frequency_pairs(&g, &default_palette()), Err(Error::Uncolorable { palette: 4, .. })));
        let single = CellGraph::new(vec![9]);
        let pal = &default_palette()[..1];
        assert_eq!(assign_frequency_pairs(&single, pal).unwrap()[&9], pal[0]);
    }

    #[test]
    fn config_round_trip() {
        let sc = Scenario::default();
        let text = sc.to_config().to_toml_string();
        let back = Scenario::from_config(&ScenarioConfig::from_toml_str(&text).unwrap()).unwrap();
        assert_eq!(back.leds, sc.leds);
        assert_eq!(back.device, sc.device);
        let empty = Scenario::from_config(&ScenarioConfig::from_toml_str("").unwrap()).unwrap();
        assert_eq!(empty.leds, sc.leds);
    }

    #[test]
    fn config_rejects_bad_input() {
        assert!(ScenarioConfig::from_toml_str("[room]\nwidht = 3.0\n").is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.leds.ids[1] = 1;
        assert!(Scenario::from_config(&cfg).is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.leds.positions[0] = [3.0, 0.4];
        assert!(Scenario::from_config(&cfg).is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.device.height = 2.0;
        assert!(matches!(Scenario::from_config(&cfg), Err(Error::CellUndefined { .. })));
        let cfg = ScenarioConfig::from_toml_str("[leds]\npair_assignment = \"auto\"\n").unwrap();
        assert!(Scenario::from_config(&cfg).is_ok());
    }
}
