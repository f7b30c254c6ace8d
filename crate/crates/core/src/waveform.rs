//! Transmit-side and device-side signal synthesis: frames, Manchester
//! chips, square-wave BFSK, multi-LED superposition and the backscatter
//! switch seen at the reader.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{dbm_to_watts, Point2};
use crate::rf::{self, PathLossMode};
use crate::scenario::{FrequencyPair, LedAp, LedId, Scenario};
use crate::vlc;

/// 7-chip Barker preamble, `1110010`.
pub const BARKER7: [bool; 7] = [true, true, true, false, false, true, false];
pub const FRAME_BITS: usize = 16;
pub const DUMMY_BIT: bool = false;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frame {
    pub id: LedId,
    pub dummy: bool,
}

impl Frame {
    pub fn new(id: LedId) -> Self {
        Self { id, dummy: DUMMY_BIT }
    }

    /// Preamble, id MSB first, dummy bit.
    pub fn bits(&self) -> [bool; FRAME_BITS] {
        let mut out = [false; FRAME_BITS];
        out[..7].copy_from_slice(&BARKER7);
        for i in 0..8 {
            out[7 + i] = self.id >> (7 - i) & 1 == 1;
        }
        out[15] = self.dummy;
        out
    }

    /// Inverse of [`Frame::bits`]; `None` unless the preamble is exact.
    pub fn parse(bits: &[bool]) -> Option<Self> {
        if bits.len() != FRAME_BITS || bits[..7] != BARKER7 {
            return None;
        }
        Some(Self { id: bits_to_id(&bits[7..15]), dummy: bits[15] })
    }
}

pub fn build_frame(id: LedId) -> [bool; FRAME_BITS] {
    Frame::new(id).bits()
}

/// Other ids whose continuously repeated frame is a rotation of this
/// id's, so that the two broadcasts are indistinguishable.
pub fn frame_aliases(id: LedId) -> Vec<LedId> {
    let bits = build_frame(id);
    let mut out: Vec<LedId> = (1..FRAME_BITS)
        .filter_map(|r| {
            let rot: Vec<bool> = (0..FRAME_BITS).map(|i| bits[(i + r) % FRAME_BITS]).collect();
            Frame::parse(&rot).filter(|f| f.dummy == DUMMY_BIT && f.id != id).map(|f| f.id)
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

pub(crate) fn bits_to_id(bits: &[bool]) -> LedId {
    bits.iter().fold(0u8, |acc, &b| acc << 1 | b as u8)
}

/// Bit 1 becomes chips `10`, bit 0 becomes `01`.
pub fn manchester_encode(bits: &[bool]) -> Vec<bool> {
    bits.iter().flat_map(|&b| [b, !b]).collect()
}

/// Strict decoding; any `00` or `11` pair fails the whole sequence.
pub fn manchester_decode(chips: &[bool]) -> Option<Vec<bool>> {
    if !chips.len().is_multiple_of(2) {
        return None;
    }
    chips.chunks(2).map(|c| if c[0] != c[1] { Some(c[0]) } else { None }).collect()
}

/// Aperiodic autocorrelation of a ±1 sequence at the given lag.
pub fn autocorrelation(seq: &[bool], lag: isize) -> i32 {
    let pm = |b: bool| if b { 1 } else { -1 };
    let n = seq.len() as isize;
    (0..n)
        .filter_map(|i| {
            let j = i + lag;
            (0..n).contains(&j).then(|| pm(seq[i as usize]) * pm(seq[j as usize]))
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationSpec {
    pub bit_rate: f64,
    pub sample_rate: f64,
    pub manchester: bool,
}

impl Default for ModulationSpec {
    fn default() -> Self {
        Self { bit_rate: 1_000.0, sample_rate: 200_000.0, manchester: true }
    }
}

impl ModulationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bit_rate > 0.0) || !(self.sample_rate > 0.0) {
            return Err(invalid("modulation", "bit and sample rates must be positive"));
        }
        let sps = self.sample_rate / self.symbol_rate();
        if (sps - sps.round()).abs() > 1e-9 || sps < 2.0 {
            return Err(invalid("modulation", format!("{sps} samples per symbol is not an integer >= 2")));
        }
        Ok(())
    }

    pub fn chips_per_bit(&self) -> usize {
        if self.manchester {
            2
        } else {
            1
        }
    }

    /// Rate of the symbols that each occupy one tone.
    pub fn symbol_rate(&self) -> f64 {
        self.bit_rate * self.chips_per_bit() as f64
    }

    pub fn samples_per_symbol(&self) -> usize {
        (self.sample_rate / self.symbol_rate()).round() as usize
    }

    pub fn symbols_per_frame(&self) -> usize {
        FRAME_BITS * self.chips_per_bit()
    }

    pub fn samples_per_frame(&self) -> usize {
        self.symbols_per_frame() * self.samples_per_symbol()
    }

    pub fn frame_duration(&self) -> f64 {
        self.samples_per_frame() as f64 / self.sample_rate
    }

    /// Tone symbols for one frame.
    pub fn frame_symbols(&self, id: LedId) -> Vec<bool> {
        let bits = build_frame(id);
        if self.manchester {
            manchester_encode(&bits)
        } else {
            bits.to_vec()
        }
    }
}

/// Uniformly sampled signal; `epoch` is the time of the first sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStream<T> {
    pub samples: Vec<T>,
    pub rate: f64,
    pub epoch: f64,
}

impl<T> SampleStream<T> {
    pub fn new(samples: Vec<T>, rate: f64, epoch: f64) -> Self {
        Self { samples, rate, epoch }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.epoch + index as f64 / self.rate
    }
}

impl SampleStream<f64> {
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }
}

impl SampleStream<Complex64> {
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Square wave sgn(sin(2π f n / f_s)), phase wrapped to one cycle first.
fn square_sample(f: f64, n: u64, rate: f64) -> f64 {
    let cycles = f * n as f64 / rate;
    sgn((2.0 * PI * cycles.fract()).sin())
}

fn check_rate(pair: &FrequencyPair, rate: f64) -> Result<()> {
    let required = 10.0 * pair.f2;
    if rate < required {
        return Err(Error::SampleRateTooLow { rate, required });
    }
    Ok(())
}

/// Square-wave BFSK for a symbol sequence (already Manchester-expanded when
/// the spec asks for it), with unit amplitude. Symbol 0 uses `f1`.
pub fn bfsk_symbols(symbols: &[bool], spec: &ModulationSpec, pair: &FrequencyPair) -> Result<SampleStream<f64>> {
    spec.validate()?;
    check_rate(pair, spec.sample_rate)?;
    let sps = spec.samples_per_symbol();
    let mut out = Vec::with_capacity(symbols.len() * sps);
    for (k, &s) in symbols.iter().enumerate() {
        let f = pair.tone(s);
        for i in 0..sps {
            out.push(square_sample(f, (k * sps + i) as u64, spec.sample_rate));
        }
    }
    Ok(SampleStream::new(out, spec.sample_rate, 0.0))
}

/// Square-wave BFSK for data bits, Manchester-encoding first if enabled.
pub fn bfsk_waveform(bits: &[bool], spec: &ModulationSpec, pair: &FrequencyPair) -> Result<SampleStream<f64>> {
    let symbols = if spec.manchester { manchester_encode(bits) } else { bits.to_vec() };
    bfsk_symbols(&symbols, spec, pair)
}

/// One AP's free-running frame loop, unit amplitude. Sample `n` of the
/// output equals sample `n + offset` of the repeated frame waveform.
pub fn ap_waveform(led: &LedAp, spec: &ModulationSpec, offset: usize, len: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    check_rate(&led.freq_pair, spec.sample_rate)?;
    let symbols = spec.frame_symbols(led.id);
    let sps = spec.samples_per_symbol();
    let period = symbols.len() * sps;
    Ok((0..len)
        .map(|n| {
            let g = (n + offset) as u64;
            let sym = symbols[(g as usize % period) / sps];
            square_sample(led.freq_pair.tone(sym), g, spec.sample_rate)
        })
        .collect())
}

/// Device photocurrent AC part: the sum of each visible AP's frame loop
/// scaled by its received amplitude. `offsets` is aligned with
/// `scenario.leds`.
pub fn device_rx_composite_with_offsets(
    scenario: &Scenario,
    p: Point2,
    len: usize,
    offsets: &[usize],
    epoch: f64,
) -> Result<SampleStream<f64>> {
    let amps = vlc::received_ac_amplitudes(scenario, p);
    let mut out = vec![0.0; len];
    for ((led, &a), &off) in scenario.leds.iter().zip(&amps).zip(offsets) {
        if a == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(ap_waveform(led, &scenario.modulation, off, len)?) {
            *o += a * w;
        }
    }
    Ok(SampleStream::new(out, scenario.modulation.sample_rate, epoch))
}

/// Uniform random frame offset per AP.
pub fn random_offsets<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<usize> {
    let period = scenario.modulation.samples_per_frame();
    scenario.leds.iter().map(|_| rng.random_range(0..period)).collect()
}

pub fn device_rx_composite<R: Rng + ?Sized>(
    scenario: &Scenario,
    p: Point2,
    duration: f64,
    rng: &mut R,
) -> Result<SampleStream<f64>> {
    let len = (duration * scenario.modulation.sample_rate).round() as usize;
    let offsets = random_offsets(scenario, rng);
    device_rx_composite_with_offsets(scenario, p, len, &offsets, 0.0)
}

/// Switch drive derived from the photodetector signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Comparator {
    /// Hard limiter against a one-pole running mean; ties keep the previous state.
    Ideal { reference_cutoff_hz: f64 },
    /// Passes the stream through, normalised to unit RMS.
    Linear,
}

impl Default for Comparator {
    fn default() -> Self {
        Comparator::Ideal { reference_cutoff_hz: 15.0 }
    }
}

impl Comparator {
    /// Switch waveform with unit RMS, or all zeros for a silent input.
    pub fn apply(&self, x: &SampleStream<f64>) -> Vec<f64> {
        let n = x.samples.len();
        if n == 0 {
            return Vec::new();
        }
        let rms = x.mean_power().sqrt();
        if rms == 0.0 {
            return vec![0.0; n];
        }
        match *self {
            Comparator::Linear => x.samples.iter().map(|v| v / rms).collect(),
            Comparator::Ideal { reference_cutoff_hz } => {
                let alpha = 1.0 - (-2.0 * PI * reference_cutoff_hz / x.rate).exp();
                let mut mean = x.samples.iter().sum::<f64>() / n as f64;
                let mut state = -1.0;
                x.samples
                    .iter()
                    .map(|&v| {
                        if v > mean {
                            state = 1.0;
                        } else if v < mean {
                            state = -1.0;
                        }
                        mean += alpha * (v - mean);
                        state
                    })
                    .collect()
            }
        }
    }
}

/// Complex baseband gain and noise of the reader link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackscatterLink {
    /// Signal amplitude at the reader, √W.
    pub amplitude: f64,
    pub phase: f64,
    /// Complex noise variance N_0·B, W.
    pub noise_power: f64,
}

impl BackscatterLink {
    /// Budget for a device at `p` whose photocurrent has RMS `i_ac`.
    pub fn from_budget<R: Rng + ?Sized>(scenario: &Scenario, p: Point2, i_ac: f64, mode: PathLossMode, rng: &mut R) -> Self {
        let amplitude = rf::backscatter_rss_db(scenario, p, i_ac, mode, rng).map_or(0.0, |dbm| dbm_to_watts(dbm).sqrt());
        Self {
            amplitude,
            phase: rng.random_range(0.0..2.0 * PI),
            noise_power: dbm_to_watts(scenario.noise.power_dbm()),
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_power = 0.0;
        self
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.amplitude * self.amplitude / self.noise_power).log10()
    }
}

/// Reader-side complex envelope: the switch state scales the reflected
/// carrier, then white Gaussian noise is added. A constant switch state
/// carries no sidebands, so the DC part is removed.
pub fn backscatter_mix<R: Rng + ?Sized>(
    device: &SampleStream<f64>,
    comparator: &Comparator,
    link: &BackscatterLink,
    rng: &mut R,
) -> SampleStream<Complex64> {
    let mut s = comparator.apply(device);
    if !s.is_empty() {
        let dc = s.iter().sum::<f64>() / s.len() as f64;
        s.iter_mut().for_each(|v| *v -= dc);
    }
    let g = Complex64::from_polar(link.amplitude, link.phase);
    let sigma = (link.noise_power / 2.0).sqrt();
    let samples = s
        .iter()
        .map(|&v| {
            let mut y = g * v;
            if sigma > 0.0 {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                y += Complex64::new(re, im) * sigma;
            }
            y
        })
        .collect();
    SampleStream::new(samples, device.rate, device.epoch)
}

/// Full device-to-reader chain for one observation window.
#[allow(clippy::too_many_arguments)]
pub fn reader_stream<R: Rng + ?Sized>(
    scenario: &Scenario,
    p: Point2,
    len: usize,
    offsets: &[usize],
    epoch: f64,
    comparator: &Comparator,
    mode: PathLossMode,
    noise: bool,
    rng: &mut R,
) -> Result<SampleStream<Complex64>> {
    let device = device_rx_composite_with_offsets(scenario, p, len, offsets, epoch)?;
    let i_ac = device.mean_power().sqrt();
    let mut link = BackscatterLink::from_budget(scenario, p, i_ac, mode, rng);
    if !noise {
        link = link.noiseless();
    }
    Ok(backscatter_mix(&device, comparator, &link, rng))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes interleaved little-endian f32 I/Q plus a `<path>.meta` text file
/// holding the rate and epoch.
pub fn write_iq(path: impl AsRef<Path>, stream: &SampleStream<Complex64>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(stream.len() * 8);
    for z in &stream.samples {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    std::fs::write(sidecar(path), format!("rate={}\nepoch={}\n", stream.rate, stream.epoch))?;
    Ok(())
}

pub fn read_iq(path: impl AsRef<Path>) -> Result<SampleStream<Complex64>> {
    let path = path.as_ref();
    let meta = std::fs::read_to_string(sidecar(path))?;
    let (mut rate, mut epoch) = (None, 0.0);
    for line in meta.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("bad sidecar line `{line}`")))?;
        let v: f64 = v.trim().parse().map_err(|e| Error::Config(format!("sidecar {k}: {e}")))?;
        match k.trim() {
            "rate" => rate = Some(v),
            "epoch" => epoch = v,
            _ => {}
        }
    }
    let rate = rate.ok_or_else(|| Error::Config("sidecar is missing `rate`".into()))?;
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() % 8 != 0 {
        return Err(Error::Config(format!("I/Q file length {} is not a multiple of 8", raw.len())));
    }
    let samples = raw
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    Ok(SampleStream::new(samples, rate, epoch))
}
