//! Reader-side non-coherent BFSK receiver: pre-filter, tone filter bank,
//! envelope decisions, Barker frame sync, ID extraction and RSS.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{watts_to_dbm, Point2};
use crate::grid::Grid;
use crate::rf::PathLossMode;
use crate::scenario::{FrequencyPair, LedId, Scenario};
use crate::waveform::{self, bits_to_id, Comparator, ModulationSpec, SampleStream, BARKER7, FRAME_BITS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Window {
    Rectangular,
    Hann,
    Hamming,
    Blackman,
    Kaiser { beta: f64 },
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

impl Window {
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        let m = (n - 1) as f64;
        (0..n)
            .map(|i| {
                let x = i as f64 / m;
                match *self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 - 0.5 * (2.0 * PI * x).cos(),
                    Window::Hamming => 0.54 - 0.46 * (2.0 * PI * x).cos(),
                    Window::Blackman => 0.42 - 0.5 * (2.0 * PI * x).cos() + 0.08 * (4.0 * PI * x).cos(),
                    Window::Kaiser { beta } => {
                        let r = 2.0 * x - 1.0;
                        bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta)
                    }
                }
            })
            .collect()
    }
}

/// Windowed-sinc low-pass with unit DC gain.
pub fn lowpass_taps(cutoff_hz: f64, rate: f64, n: usize, window: Window) -> Vec<f64> {
    let fc = cutoff_hz / rate;
    let mid = (n as f64 - 1.0) / 2.0;
    let w = window.coefficients(n);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - mid;
            let sinc = if t == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * t).sin() / (PI * t) };
            sinc * w[i]
        })
        .collect();
    let g: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= g);
    h
}

/// Complex band-pass centred on `center_hz`: the low-pass prototype
/// shifted up, so its output is already the analytic signal.
pub fn bandpass_taps(center_hz: f64, bandwidth_hz: f64, rate: f64, n: usize, window: Window) -> Vec<Complex64> {
    let mid = (n as f64 - 1.0) / 2.0;
    lowpass_taps(bandwidth_hz / 2.0, rate, n, window)
        .into_iter()
        .enumerate()
        .map(|(i, v)| v * Complex64::from_polar(1.0, 2.0 * PI * center_hz * (i as f64 - mid) / rate))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BandpassKind {
    /// Boxcar of one symbol times the tone: correlate-and-dump per symbol.
    Matched,
    /// Long windowed-sinc band-pass followed by a one-symbol envelope average.
    Narrowband { bandwidth_hz: f64, taps: usize, window: Window },
}

impl BandpassKind {
    /// The 500 Hz design that meets the 20 dB tone-isolation target.
    pub fn narrowband_preset() -> Self {
        BandpassKind::Narrowband { bandwidth_hz: 500.0, taps: 400, window: Window::Kaiser { beta: 4.0 } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterBankSpec {
    pub lpf_cutoff_hz: f64,
    pub lpf_taps: usize,
    pub bandpass: BandpassKind,
}

impl Default for FilterBankSpec {
    fn default() -> Self {
        Self { lpf_cutoff_hz: 20_000.0, lpf_taps: 63, bandpass: BandpassKind::Matched }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseFloor {
    /// No bias correction.
    None,
    /// Known complex noise power, W.
    Known { power: f64 },
    /// Estimated from the lower quartile of the periodogram.
    Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverSpec {
    pub bank: FilterBankSpec,
    /// Maximum preamble Hamming distance accepted by frame sync.
    pub preamble_tolerance: usize,
    pub noise_floor: NoiseFloor,
    /// Successive interference cancellation: every decoded AP is
    /// re-synthesised and subtracted before searching again, so weaker
    /// APs in an overlap are not masked by the strongest one.
    pub cancellation: bool,
    /// With cancellation on, an AP whose fitted level is further than this
    /// below the strongest decoded AP is taken to be cancellation residue.
    pub cancellation_floor_db: f64,
}

impl Default for ReceiverSpec {
    fn default() -> Self {
        Self { bank: FilterBankSpec::default(), preamble_tolerance: 0, noise_floor: NoiseFloor::Estimate, cancellation: true, cancellation_floor_db: -24.0 }
    }
}

/// Designed filters for a set of frequency pairs at one sample rate.
#[derive(Clone, Debug)]
pub struct FilterBank {
    pub spec: FilterBankSpec,
    pub pairs: Vec<FrequencyPair>,
    pub rate: f64,
    pub symbol_len: usize,
    lpf: Vec<f64>,
    narrow: Vec<[Vec<Complex64>; 2]>,
}

impl FilterBank {
    pub fn new(spec: &FilterBankSpec, pairs: &[FrequencyPair], modulation: &ModulationSpec) -> Result<Self> {
        modulation.validate()?;
        let rate = modulation.sample_rate;
        if !(spec.lpf_cutoff_hz > 0.0 && spec.lpf_cutoff_hz < rate / 2.0) || spec.lpf_taps == 0 {
            return Err(invalid("receiver.bank.lpf", "cutoff must lie in (0, rate/2) with at least one tap"));
        }
        let lpf = lowpass_taps(spec.lpf_cutoff_hz, rate, spec.lpf_taps, Window::Hamming);
        let narrow = match spec.bandpass {
            BandpassKind::Matched => Vec::new(),
            BandpassKind::Narrowband { bandwidth_hz, taps, window } => {
                if !(bandwidth_hz > 0.0) || taps == 0 {
                    return Err(invalid("receiver.bank.bandpass", "bandwidth and taps must be positive"));
                }
                for p in pairs {
                    p.validate(bandwidth_hz)?;
                }
                pairs
                    .iter()
                    .map(|p| {
                        [
                            bandpass_taps(p.f1, bandwidth_hz, rate, taps, window),
                            bandpass_taps(p.f2, bandwidth_hz, rate, taps, window),
                        ]
                    })
                    .collect()
            }
        };
        Ok(Self {
            spec: spec.clone(),
            pairs: pairs.to_vec(),
            rate,
            symbol_len: modulation.samples_per_symbol(),
            lpf,
            narrow,
        })
    }

    pub fn prefilter(&self, x: &[Complex64]) -> Vec<Complex64> {
        convolve_same(x, &self.lpf)
    }

    /// Per-symbol envelope of one tone filter: `energy(s)` integrates the
    /// symbol that starts at sample `s`.
    fn tone_envelope(&self, x: &[Complex64], pair: usize, which: usize) -> ToneEnvelope {
        let l = self.symbol_len;
        match self.spec.bandpass {
            BandpassKind::Matched => {
                let f = if which == 0 { self.pairs[pair].f1 } else { self.pairs[pair].f2 };
                // The switch waveform is real, so each tone shows up at +f
                // and -f; both sidebands are correlated.
                let zero = Complex64::new(0.0, 0.0);
                let (mut ap, mut an) = (zero, zero);
                let mut pos = Vec::with_capacity(x.len() + 1);
                let mut neg = Vec::with_capacity(x.len() + 1);
                pos.push(zero);
                neg.push(zero);
                for (n, &v) in x.iter().enumerate() {
                    let rot = Complex64::from_polar(1.0, -2.0 * PI * (f * n as f64 / self.rate).fract());
                    ap += v * rot;
                    an += v * rot.conj();
                    pos.push(ap);
                    neg.push(an);
                }
                ToneEnvelope::Coherent { pos, neg, len: l }
            }
            BandpassKind::Narrowband { .. } => {
                let u = convolve_same(x, &self.narrow[pair][which]);
                let mut acc = 0.0;
                let mut prefix = Vec::with_capacity(x.len() + 1);
                prefix.push(acc);
                for v in &u {
                    acc += v.norm();
                    prefix.push(acc);
                }
                ToneEnvelope::Magnitude { prefix, len: l }
            }
        }
    }

    /// Steady-state envelope of a pure tone in every filter, with the
    /// same per-symbol integration used for decisions.
    pub fn tone_response(&self, tone_hz: f64) -> Vec<[f64; 2]> {
        let n = 8 * self.symbol_len + 2 * self.narrow_taps();
        let x: Vec<Complex64> =
            (0..n).map(|i| Complex64::new((2.0 * PI * tone_hz * i as f64 / self.rate).cos(), 0.0)).collect();
        let start = n / 2 - self.symbol_len / 2;
        (0..self.pairs.len())
            .map(|p| [0, 1].map(|w| self.tone_envelope(&x, p, w).energy(start)))
            .collect()
    }

    fn narrow_taps(&self) -> usize {
        match self.spec.bandpass {
            BandpassKind::Matched => 0,
            BandpassKind::Narrowband { taps, .. } => taps,
        }
    }

    /// Worst-case margin, in dB, between a pure tone at either tone of
    /// `pair` in its own filter and in any other filter of the bank.
    pub fn isolation_db(&self, pair: usize) -> f64 {
        let mut worst = f64::INFINITY;
        for which in 0..2 {
            let f = if which == 0 { self.pairs[pair].f1 } else { self.pairs[pair].f2 };
            let resp = self.tone_response(f);
            let own = resp[pair][which];
            for (p, r) in resp.iter().enumerate() {
                for (w, &v) in r.iter().enumerate() {
                    if (p, w) != (pair, which) {
                        worst = worst.min(20.0 * (own / v).log10());
                    }
                }
            }
        }
        worst
    }
}

enum ToneEnvelope {
    Coherent { pos: Vec<Complex64>, neg: Vec<Complex64>, len: usize },
    Magnitude { prefix: Vec<f64>, len: usize },
}

impl ToneEnvelope {
    fn energy(&self, start: usize) -> f64 {
        match self {
            ToneEnvelope::Coherent { .. } => self.correlation(start).iter().map(|c| c.norm()).sum(),
            ToneEnvelope::Magnitude { prefix, len } => (prefix[start + len] - prefix[start]) / *len as f64,
        }
    }

    /// Correlations at `+f` and `-f`.
    fn correlation(&self, start: usize) -> [Complex64; 2] {
        match self {
            ToneEnvelope::Coherent { pos, neg, len } => {
                let k = *len as f64;
                [(pos[start + len] - pos[start]) / k, (neg[start + len] - neg[start]) / k]
            }
            ToneEnvelope::Magnitude { .. } => [Complex64::new(self.energy(start), 0.0), Complex64::new(0.0, 0.0)],
        }
    }
}

/// Linear convolution trimmed to the input length with the filter's
/// group delay removed.
pub fn convolve_same<T>(x: &[Complex64], h: &[T]) -> Vec<Complex64>
where
    T: Copy + Into<Complex64>,
{
    let delay = (h.len() - 1) / 2;
    let n = x.len();
    let h: Vec<Complex64> = h.iter().map(|&v| v.into()).collect();
    (0..n)
        .map(|i| {
            let k = i + delay;
            let lo = k.saturating_sub(n - 1);
            let hi = k.min(h.len() - 1);
            let mut acc = Complex64::new(0.0, 0.0);
            for j in lo..=hi {
                acc += h[j] * x[k - j];
            }
            acc
        })
        .collect()
}

/// Symbol decisions for one frequency pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDecisions {
    pub pair: FrequencyPair,
    /// Sample index of the first symbol boundary.
    pub phase: usize,
    /// True where the `f2` tone won.
    pub symbols: Vec<bool>,
    /// Envelope difference `f2 − f1` per symbol.
    pub soft: Vec<f64>,
}

fn unit(z: Complex64) -> Complex64 {
    let m = z.norm();
    if m > 0.0 {
        z / m
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// Soft decisions `f2 − f1` for the symbols starting at `phase`.
///
/// Tones are phase-continuous, so with the matched bank every symbol that
/// carries a given tone correlates to the same phase. Those per-tone phase
/// references are estimated decision-directed and the decisions are made
/// on the in-phase projections, which discriminates the closely spaced
/// tones far better than envelope magnitudes.
fn symbol_soft(e1: &ToneEnvelope, e2: &ToneEnvelope, phase: usize, l: usize, n: usize) -> Vec<f64> {
    let count = if n >= phase + l { (n - phase) / l } else { 0 };
    if matches!(e1, ToneEnvelope::Magnitude { .. }) {
        return (0..count).map(|k| e2.energy(phase + k * l) - e1.energy(phase + k * l)).collect();
    }
    let c1: Vec<[Complex64; 2]> = (0..count).map(|k| e1.correlation(phase + k * l)).collect();
    let c2: Vec<[Complex64; 2]> = (0..count).map(|k| e2.correlation(phase + k * l)).collect();
    let mag = |c: &[Complex64; 2]| c[0].norm() + c[1].norm();
    let mut soft: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| mag(b) - mag(a)).collect();
    let zero = Complex64::new(0.0, 0.0);
    for _ in 0..3 {
        let (mut r1, mut r2) = ([zero; 2], [zero; 2]);
        for k in 0..count {
            let (r, c) = if soft[k] > 0.0 { (&mut r2, &c2[k]) } else { (&mut r1, &c1[k]) };
            r[0] += c[0];
            r[1] += c[1];
        }
        let (r1, r2) = (r1.map(|r| unit(r).conj()), r2.map(|r| unit(r).conj()));
        let proj = |c: &[Complex64; 2], r: &[Complex64; 2]| (c[0] * r[0]).re + (c[1] * r[1]).re;
        soft = c1.iter().zip(&c2).map(|(a, b)| proj(b, &r2) - proj(a, &r1)).collect();
    }
    soft
}

fn check_stream_rate(stream: &SampleStream<Complex64>, bank: &FilterBank) -> Result<()> {
    if (stream.rate - bank.rate).abs() > 1e-9 * bank.rate {
        return Err(invalid("stream.rate", format!("{} Hz does not match the filter design rate {} Hz", stream.rate, bank.rate)));
    }
    Ok(())
}

/// Per-pair symbol decisions. The symbol clock is recovered per pair by
/// picking the boundary phase with the strongest winning envelope, so any
/// start offset is tolerated.
pub fn demodulate(stream: &SampleStream<Complex64>, bank: &FilterBank) -> Result<Vec<PairDecisions>> {
    check_stream_rate(stream, bank)?;
    let x = bank.prefilter(&stream.samples);
    let l = bank.symbol_len;
    let n = x.len();
    Ok((0..bank.pairs.len())
        .map(|p| {
            let e1 = bank.tone_envelope(&x, p, 0);
            let e2 = bank.tone_envelope(&x, p, 1);
            // A window aligned with the symbols holds a single coherent
            // tone, so the winning envelope peaks at the right phase.
            let mut best = (0, f64::NEG_INFINITY);
            for phase in 0..l.min(n) {
                let count = if n >= phase + l { (n - phase) / l } else { 0 };
                let score: f64 = (0..count).map(|k| e1.energy(phase + k * l).max(e2.energy(phase + k * l))).sum::<f64>()
                    / count.max(1) as f64;
                if score > best.1 {
                    best = (phase, score);
                }
            }
            let soft = symbol_soft(&e1, &e2, best.0, l, n);
            PairDecisions { pair: bank.pairs[p], phase: best.0, symbols: soft.iter().map(|&d| d > 0.0).collect(), soft }
        })
        .collect())
}

/// A frame located in a symbol stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyncHit {
    /// Index of the first preamble symbol.
    pub symbol_offset: usize,
    pub id: LedId,
    pub dummy: bool,
    pub distance: usize,
}

/// Finds frames in a symbol stream. With Manchester on, symbols are
/// decoded at both pair alignments and an invalid pair counts as a
/// preamble mismatch (and voids the id). Overlapping candidates are
/// resolved by lowest distance, then earliest offset.
pub fn frame_sync(symbols: &[bool], manchester: bool, tolerance: usize) -> Vec<SyncHit> {
    let step = if manchester { 2 } else { 1 };
    let mut cands = Vec::new();
    for parity in 0..step {
        let bits: Vec<Option<bool>> = if manchester {
            symbols[parity.min(symbols.len())..]
                .chunks_exact(2)
                .map(|c| if c[0] != c[1] { Some(c[0]) } else { None })
                .collect()
        } else {
            symbols.iter().map(|&b| Some(b)).collect()
        };
        let conf = vec![0.0; bits.len()];
        scan_bits(&bits, &conf, parity, step, tolerance, &mut cands);
    }
    resolve(cands, step)
}

/// Frame sync on soft symbols. Manchester bits are decided from the
/// difference of their two halves, so no pair is ever invalid; ties
/// between alignments go to the one with the larger decision margin.
pub fn frame_sync_soft(soft: &[f64], manchester: bool, tolerance: usize) -> Vec<SyncHit> {
    frame_sync_soft_with(soft, manchester, tolerance, |_| true)
}

/// As [`frame_sync_soft`], keeping only candidates whose id passes
/// `accept` before overlaps are resolved. Repeated frames of some ids
/// contain a rotated copy that parses as a different id; knowing which
/// ids can be on the air removes that alias.
pub fn frame_sync_soft_with(soft: &[f64], manchester: bool, tolerance: usize, accept: impl Fn(LedId) -> bool) -> Vec<SyncHit> {
    let step = if manchester { 2 } else { 1 };
    let mut cands = Vec::new();
    for parity in 0..step {
        let d: Vec<f64> = if manchester {
            soft[parity.min(soft.len())..].chunks_exact(2).map(|c| c[0] - c[1]).collect()
        } else {
            soft.to_vec()
        };
        let bits: Vec<Option<bool>> = d.iter().map(|&v| Some(v > 0.0)).collect();
        let conf: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        scan_bits(&bits, &conf, parity, step, tolerance, &mut cands);
    }
    cands.retain(|c| accept(c.hit.id));
    resolve(cands, step)
}

struct Candidate {
    hit: SyncHit,
    confidence: f64,
}

fn scan_bits(bits: &[Option<bool>], conf: &[f64], parity: usize, step: usize, tolerance: usize, out: &mut Vec<Candidate>) {
    if bits.len() < FRAME_BITS {
        return;
    }
    for b in 0..=bits.len() - FRAME_BITS {
        let w = &bits[b..b + FRAME_BITS];
        let distance = w[..7].iter().zip(BARKER7).filter(|(x, p)| **x != Some(*p)).count();
        if distance > tolerance {
            continue;
        }
        let Some(payload) = w[7..].iter().copied().collect::<Option<Vec<bool>>>() else {
            continue;
        };
        out.push(Candidate {
            hit: SyncHit { symbol_offset: parity + step * b, id: bits_to_id(&payload[..8]), dummy: payload[8], distance },
            confidence: conf[b..b + FRAME_BITS].iter().sum(),
        });
    }
}

fn resolve(mut cands: Vec<Candidate>, step: usize) -> Vec<SyncHit> {
    cands.sort_by(|a, b| {
        a.hit
            .distance
            .cmp(&b.hit.distance)
            .then(b.confidence.total_cmp(&a.confidence))
            .then(a.hit.symbol_offset.cmp(&b.hit.symbol_offset))
    });
    let span = FRAME_BITS * step;
    let mut kept: Vec<SyncHit> = Vec::new();
    for c in cands {
        if kept.iter().all(|k| k.symbol_offset.abs_diff(c.hit.symbol_offset) >= span) {
            kept.push(c.hit);
        }
    }
    kept.sort_by_key(|h| h.symbol_offset);
    kept
}

/// Number of positions where a bit stream matches the preamble within
/// `tolerance`, before any payload validation.
pub fn count_preamble_matches(bits: &[bool], tolerance: usize) -> usize {
    if bits.len() < 7 {
        return 0;
    }
    bits.windows(7).filter(|w| w.iter().zip(BARKER7).filter(|(a, b)| **a != *b).count() <= tolerance).count()
}

/// Power of the stream in dBm after removing the noise floor, or `None`
/// when nothing is left above it.
pub fn measure_rss(stream: &SampleStream<Complex64>, floor: NoiseFloor) -> Option<f64> {
    if stream.is_empty() {
        return None;
    }
    let p = stream.mean_power();
    let noise = match floor {
        NoiseFloor::None => 0.0,
        NoiseFloor::Known { power } => power,
        NoiseFloor::Estimate => estimate_noise_floor(&stream.samples),
    };
    let s = p - noise;
    (s > 0.0).then(|| watts_to_dbm(s))
}

/// White-noise power from the lower quartile of the periodogram; the
/// signal only occupies a few narrow tone bands.
pub fn estimate_noise_floor(x: &[Complex64]) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let mut buf = x.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut bins: Vec<f64> = buf.iter().map(|v| v.norm_sqr() / n as f64).collect();
    let q = n / 4;
    let (_, quartile, _) = bins.select_nth_unstable_by(q, |a, b| a.total_cmp(b));
    // Exponential bins: the 25th percentile sits at −ln(0.75) of the mean.
    *quartile / -(0.75f64).ln()
}

/// Fits one AP's contribution to `x` and subtracts it. The AP is known
/// by its pair, id and the sample at which one of its frames starts; the
/// model holds the odd harmonics of both tones at both sidebands, each
/// gated by the symbols of the repeated frame. Returns the fitted RMS
/// amplitude of the fundamental terms.
fn cancel_ap(x: &mut [Complex64], spec: &ModulationSpec, pair: &FrequencyPair, id: LedId, start: usize) -> f64 {
    let symbols = spec.frame_symbols(id);
    let sps = spec.samples_per_symbol();
    let period = (symbols.len() * sps) as isize;
    let rate = spec.sample_rate;
    let tone_of = |n: usize| symbols[((n as isize - start as isize).rem_euclid(period) / sps as isize) as usize];
    let mut basis = Vec::new();
    for tone in [false, true] {
        let f = pair.tone(tone);
        for k in (1..).step_by(2).take_while(|&k| k as f64 * f < rate / 2.0) {
            for sign in [1.0, -1.0] {
                basis.push((tone, k, sign * k as f64 * f));
            }
        }
    }
    let mut coef = vec![Complex64::new(0.0, 0.0); basis.len()];
    // Gauss-Seidel least squares; the components are nearly orthogonal.
    for _ in 0..2 {
        for (&(tone, _, f), c) in basis.iter().zip(&mut coef) {
            let rot = |n: usize| Complex64::from_polar(1.0, 2.0 * PI * (f * n as f64 / rate).fract());
            let (mut acc, mut count) = (Complex64::new(0.0, 0.0), 0usize);
            for (n, v) in x.iter().enumerate() {
                if tone_of(n) == tone {
                    acc += v * rot(n).conj();
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let a = acc / count as f64;
            *c += a;
            for (n, v) in x.iter_mut().enumerate() {
                if tone_of(n) == tone {
                    *v -= a * rot(n);
                }
            }
        }
    }
    let fundamental: Vec<f64> = basis.iter().zip(&coef).filter(|(b, _)| b.1 == 1).map(|(_, c)| c.norm_sqr()).collect();
    (fundamental.iter().sum::<f64>() / fundamental.len().max(1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub led_id: LedId,
    /// Start time of the frame, s.
    pub epoch: f64,
    pub rss_db: Option<f64>,
    pub bit_errors: Option<usize>,
}

impl Detection {
    fn at(led_id: LedId, epoch: f64) -> Self {
        Self { led_id, epoch, rss_db: None, bit_errors: None }
    }
}

/// Receiver configured for one deployment.
#[derive(Clone, Debug)]
pub struct Receiver {
    pub spec: ReceiverSpec,
    pub modulation: ModulationSpec,
    pub bank: FilterBank,
    /// (id, pair index) for every LED.
    pub ids: Vec<(LedId, usize)>,
}

impl Receiver {
    pub fn new(scenario: &Scenario, spec: &ReceiverSpec) -> Result<Self> {
        let pairs: Vec<FrequencyPair> = scenario.palette().to_vec();
        let bank = FilterBank::new(&spec.bank, &pairs, &scenario.modulation)?;
        let ids = scenario
            .leds
            .iter()
            .map(|l| (l.id, pairs.iter().position(|p| *p == l.freq_pair).expect("pair from palette")))
            .collect();
        Ok(Self { spec: spec.clone(), modulation: scenario.modulation.clone(), bank, ids })
    }

    /// Valid frames in the stream: the id must belong to an LED that
    /// transmits on the pair it was decoded from.
    pub fn detect(&self, stream: &SampleStream<Complex64>) -> Result<Vec<Detection>> {
        let l = self.bank.symbol_len;
        let mut residual = stream.clone();
        let mut out: Vec<Detection> = Vec::new();
        let mut strongest = 0.0f64;
        loop {
            let decisions = demodulate(&residual, &self.bank)?;
            let mut fresh = Vec::new();
            for (p, d) in decisions.iter().enumerate() {
                let known = |id| self.ids.contains(&(id, p)) && !out.iter().any(|o| o.led_id == id);
                for hit in frame_sync_soft_with(&d.soft, self.modulation.manchester, self.spec.preamble_tolerance, known) {
                    fresh.push((p, hit.id, d.phase + hit.symbol_offset * l));
                }
            }
            if fresh.is_empty() {
                break;
            }
            if !self.spec.cancellation {
                out.extend(fresh.iter().map(|&(_, id, start)| Detection::at(id, stream.time_of(start))));
                break;
            }
            // Strongest first, so the floor is judged against the right
            // reference and weaker fits see the cleanest residual.
            let mut ranked: Vec<(f64, usize, LedId, usize)> = fresh
                .iter()
                .map(|&(p, id, start)| {
                    let level = cancel_ap(&mut residual.samples.clone(), &self.modulation, &self.bank.pairs[p], id, start);
                    (level, p, id, start)
                })
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut accepted = false;
            for (_, p, id, start) in ranked {
                if out.iter().any(|o| o.led_id == id) {
                    out.push(Detection::at(id, stream.time_of(start)));
                    continue;
                }
                let mut trial = residual.samples.clone();
                let level = cancel_ap(&mut trial, &self.modulation, &self.bank.pairs[p], id, start);
                strongest = strongest.max(level);
                if level > 0.0 && 20.0 * (level / strongest).log10() >= self.spec.cancellation_floor_db {
                    residual.samples = trial;
                    out.push(Detection::at(id, stream.time_of(start)));
                    accepted = true;
                }
            }
            if !accepted {
                break;
            }
        }
        if !out.is_empty() {
            let rss = measure_rss(stream, self.spec.noise_floor);
            out.iter_mut().for_each(|d| d.rss_db = rss);
        }
        out.sort_by(|a, b| a.epoch.total_cmp(&b.epoch).then(a.led_id.cmp(&b.led_id)));
        Ok(out)
    }
}

/// Settings for the waveform-level BER survey.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerMapSpec {
    pub resolution: f64,
    /// Frames observed per grid point.
    pub frames: usize,
    pub comparator: Comparator,
    pub pathloss: PathLossMode,
}

impl Default for BerMapSpec {
    fn default() -> Self {
        Self { resolution: 0.2, frames: 63, comparator: Comparator::default(), pathloss: PathLossMode::Expected }
    }
}

/// Per-AP bit error rate grids.
#[derive(Clone, Debug)]
pub struct BerMap {
    pub grids: Vec<(LedId, Grid)>,
    pub bits_per_point: usize,
}

/// Bit errors of each AP's frame loop in one reader window, with the
/// symbol clock and frame position taken from the known offsets.
pub fn genie_bit_errors(
    stream: &SampleStream<Complex64>,
    scenario: &Scenario,
    bank: &FilterBank,
    offsets: &[usize],
) -> Result<Vec<(usize, usize)>> {
    check_stream_rate(stream, bank)?;
    let spec = &scenario.modulation;
    let x = bank.prefilter(&stream.samples);
    let n = x.len();
    let l = bank.symbol_len;
    let cpb = spec.chips_per_bit();
    let period = spec.samples_per_frame();
    let mut out = Vec::with_capacity(scenario.leds.len());
    for (led, &off) in scenario.leds.iter().zip(offsets) {
        let p = bank.pairs.iter().position(|q| *q == led.freq_pair).expect("pair in bank");
        let e1 = bank.tone_envelope(&x, p, 0);
        let e2 = bank.tone_envelope(&x, p, 1);
        let bits = waveform::build_frame(led.id);
        let bit_len = l * cpb;
        // First sample at which a data bit starts.
        let first = (bit_len - off % bit_len) % bit_len;
        let soft = symbol_soft(&e1, &e2, first, l, n);
        let (mut errors, mut total) = (0, 0);
        for (k, d) in soft.chunks_exact(cpb).enumerate() {
            let s = first + k * bit_len;
            let bit_index = ((s + off) % period) / bit_len;
            let decided = if cpb == 2 { d[0] - d[1] > 0.0 } else { d[0] > 0.0 };
            errors += (decided != bits[bit_index]) as usize;
            total += 1;
        }
        out.push((errors, total));
    }
    Ok(out)
}

/// Waveform-level BER of every AP over a grid of device positions.
pub fn ber_map(scenario: &Scenario, receiver: &ReceiverSpec, spec: &BerMapSpec, seed: u64) -> Result<BerMap> {
    let bank = FilterBank::new(&receiver.bank, scenario.palette(), &scenario.modulation)?;
    let template = Grid::covering(&scenario.room, spec.resolution, "ber")?;
    let points = template.points();
    let len = spec.frames * scenario.modulation.samples_per_frame();
    let per_point: Vec<Vec<(usize, usize)>> = points
        .par_iter()
        .enumerate()
        .map(|(k, &p)| -> Result<Vec<(usize, usize)>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            ber_point(scenario, &bank, spec, p, len, &mut rng)
        })
        .collect::<Result<_>>()?;
    let bits_per_point = per_point.first().and_then(|v| v.first()).map_or(0, |e| e.1);
    let grids = scenario
        .leds
        .iter()
        .enumerate()
        .map(|(i, led)| {
            let mut g = template.clone();
            g.values = per_point.iter().map(|v| v[i].0 as f64 / v[i].1.max(1) as f64).collect();
            (led.id, g)
        })
        .collect();
    Ok(BerMap { grids, bits_per_point })
}

fn ber_point<R: Rng>(
    scenario: &Scenario,
    bank: &FilterBank,
    spec: &BerMapSpec,
    p: Point2,
    len: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let offsets = waveform::random_offsets(scenario, rng);
    let y = waveform::reader_stream(scenario, p, len, &offsets, 0.0, &spec.comparator, spec.pathloss, true, rng)?;
    genie_bit_errors(&y, scenario, bank, &offsets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowpass_has_unit_dc_gain() {
        let h = lowpass_taps(20_000.0, 200_000.0, 63, Window::Hamming);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((h[0] - h[62]).abs() < 1e-15);
    }

    #[test]
    fn kaiser_endpoints() {
        let w = Window::Kaiser { beta: 4.0 }.coefficients(11);
        assert!((w[5] - 1.0).abs() < 1e-12);
        assert!((w[0] - 1.0 / bessel_i0(4.0)).abs() < 1e-12);
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn convolve_same_identity() {
        let x: Vec<Complex64> = (0..10).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        assert_eq!(convolve_same(&x, &[0.0, 1.0, 0.0]), x);
    }

    #[test]
    fn sync_examples() {
        let syms = |id| waveform::manchester_encode(&waveform::build_frame(id));
        let hits = frame_sync(&syms(3), true, 0);
        assert_eq!(hits.len(), 1);
        assert_eq!((hits[0].id, hits[0].symbol_offset, hits[0].distance), (3, 0, 0));

        let mut bits = waveform::build_frame(3).to_vec();
        bits[2] = !bits[2];
        let flipped = waveform::manchester_encode(&bits);
        assert!(frame_sync(&flipped, true, 0).is_empty());
        let hit = frame_sync(&flipped, true, 1);
        assert_eq!(hit.len(), 1);
        assert_eq!((hit[0].id, hit[0].distance), (3, 1));
    }

    #[test]
    fn noise_floor_estimate_on_white_noise() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigma2 = 4.0;
        let x: Vec<Complex64> = (0..16_384)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) * (sigma2 / 2.0f64).sqrt()
            })
            .collect();
        let est = estimate_noise_floor(&x);
        assert!((est / sigma2 - 1.0).abs() < 0.05, "{est}");
    }
}
