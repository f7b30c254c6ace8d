use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vlcbc::receiver::{self, BandpassKind, FilterBank, FilterBankSpec, NoiseFloor, Receiver, ReceiverSpec};
use vlcbc::rf::{self, PathLossMode};
use vlcbc::waveform::{self, Comparator, SampleStream};
use vlcbc::{LedId, Point2, Scenario};

const WINDOW: usize = 8000;

fn stream(sc: &Scenario, p: Point2, comparator: Comparator, noise: bool, rng: &mut ChaCha8Rng) -> SampleStream<Complex64> {
    let offsets = waveform::random_offsets(sc, rng);
    waveform::reader_stream(sc, p, WINDOW, &offsets, 0.0, &comparator, PathLossMode::Expected, noise, rng).unwrap()
}

fn ids(rx: &Receiver, s: &SampleStream<Complex64>) -> BTreeSet<LedId> {
    rx.detect(s).unwrap().into_iter().map(|d| d.led_id).collect()
}

fn louder(db: f64) -> Scenario {
    let mut cfg = Scenario::default().to_config();
    cfg.rf.carrier_power_dbm += db;
    Scenario::from_config(&cfg).unwrap()
}

#[test]
fn narrowband_preset_isolates_every_pair() {
    let sc = Scenario::default();
    let spec = FilterBankSpec { bandpass: BandpassKind::narrowband_preset(), ..Default::default() };
    let bank = FilterBank::new(&spec, sc.palette(), &sc.modulation).unwrap();
    for p in 0..bank.pairs.len() {
        let iso = bank.isolation_db(p);
        assert!(iso >= 20.0, "pair {p}: {iso:.2} dB");
    }
}

#[test]
fn noiseless_centres_decode_exactly_their_led() {
    let sc = Scenario::default();
    let rx = Receiver::new(&sc, &ReceiverSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for led in &sc.leds {
        let s = stream(&sc, led.position.xy(), Comparator::default(), false, &mut rng);
        assert_eq!(ids(&rx, &s), BTreeSet::from([led.id]), "LED {}", led.id);
    }
}

#[test]
fn nominal_snr_centres_decode_their_led() {
    let sc = Scenario::default();
    let rx = Receiver::new(&sc, &ReceiverSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for led in &sc.leds {
        let hits = (0..5)
            .filter(|_| ids(&rx, &stream(&sc, led.position.xy(), Comparator::default(), true, &mut rng)).contains(&led.id))
            .count();
        assert!(hits >= 4, "LED {}: {hits}/5", led.id);
    }
}

#[test]
fn two_ap_overlap_decodes_both_at_high_snr() {
    let sc = louder(30.0);
    let rx = Receiver::new(&sc, &ReceiverSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mid = Point2::new(0.8, 0.4);
    for _ in 0..5 {
        let s = stream(&sc, mid, Comparator::Linear, true, &mut rng);
        assert_eq!(ids(&rx, &s), BTreeSet::from([1, 2]));
    }
}

#[test]
fn overlap_bits_are_error_free_at_high_snr() {
    let sc = louder(30.0);
    let rx = Receiver::new(&sc, &ReceiverSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mid = Point2::new(0.8, 0.4);
    let offsets = waveform::random_offsets(&sc, &mut rng);
    let s = waveform::reader_stream(&sc, mid, WINDOW, &offsets, 0.0, &Comparator::Linear, PathLossMode::Expected, true, &mut rng)
        .unwrap();
    let errs = receiver::genie_bit_errors(&s, &sc, &rx.bank, &offsets).unwrap();
    for (led, (e, n)) in sc.leds.iter().zip(errs).filter(|(l, _)| l.id == 1 || l.id == 2) {
        assert!(n > 30);
        assert_eq!(e, 0, "LED {}", led.id);
    }
}

#[test]
fn noise_only_input_rarely_fires() {
    let sc = Scenario::default();
    let rx = Receiver::new(&sc, &ReceiverSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let sigma = (rf_noise_power(&sc) / 2.0).sqrt();
    let trials = 40;
    let mut alarms = 0;
    for _ in 0..trials {
        let x: Vec<Complex64> = (0..WINDOW)
            .map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * sigma)
            .collect();
        alarms += rx.detect(&SampleStream::new(x, sc.modulation.sample_rate, 0.0)).unwrap().len();
    }
    assert!(alarms <= 2, "{alarms} false detections in {trials} windows");
}

fn rf_noise_power(sc: &Scenario) -> f64 {
    vlcbc::geometry::dbm_to_watts(sc.noise.power_dbm())
}

#[test]
fn random_bits_match_preamble_at_chance_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let n = 1_000_000;
    let bits: Vec<bool> = (0..n).map(|_| rng.random()).collect();
    let matches = receiver::count_preamble_matches(&bits, 0) as f64;
    let expect = (n - 6) as f64 / 128.0;
    assert!((matches - expect).abs() < 0.05 * expect, "{matches} vs {expect}");
    let soft: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let deployed = Scenario::default().ids();
    let validated = receiver::frame_sync_soft_with(&soft, false, 0, |id| deployed.contains(&id)).len() as f64;
    assert!(validated < 0.05 * matches, "{validated} validated of {matches}");
}

#[test]
fn measured_rss_tracks_link_budget_at_20_db_snr() {
    let base = Scenario::default();
    let p = Point2::new(1.2, 0.4);
    let nominal = rf::expected_rss_db(&base, p).unwrap();
    let sc = louder(20.0 - (nominal - base.noise.power_dbm()));
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let offsets = waveform::random_offsets(&sc, &mut rng);
        let device = waveform::device_rx_composite_with_offsets(&sc, p, WINDOW, &offsets, 0.0).unwrap();
        let i_ac = device.mean_power().sqrt();
        let budget = rf::backscatter_rss_db(&sc, p, i_ac, PathLossMode::Expected, &mut rng).unwrap();
        let s = waveform::reader_stream(&sc, p, WINDOW, &offsets, 0.0, &Comparator::default(), PathLossMode::Expected, true, &mut rng)
            .unwrap();
        let measured = receiver::measure_rss(&s, NoiseFloor::Estimate).unwrap();
        assert!((measured - budget).abs() < 1.0, "measured {measured:.2} vs budget {budget:.2} dBm");
    }
}

#[test]
fn ber_does_not_rise_with_carrier_power() {
    let p = Point2::new(0.65, 0.4);
    let count = |db: f64| {
        let sc = louder(db);
        let rx = Receiver::new(&sc, &ReceiverSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        (0..10)
            .map(|_| {
                let offsets = waveform::random_offsets(&sc, &mut rng);
                let s = waveform::reader_stream(&sc, p, WINDOW, &offsets, 0.0, &Comparator::default(), PathLossMode::Expected, true, &mut rng)
                    .unwrap();
                receiver::genie_bit_errors(&s, &sc, &rx.bank, &offsets).unwrap()[0].0
            })
            .sum::<usize>()
    };
    let (lo, mid, hi) = (count(0.0), count(6.0), count(12.0));
    assert!(lo >= mid && mid >= hi, "errors {lo} -> {mid} -> {hi}");
}

#[test]
fn decodes_a_stream_read_back_from_disk() {
    let sc = Scenario::default();
    let rx = Receiver::new(&sc, &ReceiverSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let s = stream(&sc, Point2::new(2.0, 1.2), Comparator::default(), false, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reader.iq");
    waveform::write_iq(&path, &s).unwrap();
    let back = waveform::read_iq(&path).unwrap();
    let d = rx.detect(&back).unwrap();
    assert!(!d.is_empty());
    assert!(d.iter().all(|d| d.led_id == 6 && d.rss_db.is_some()));
}

#[test]
fn cancellation_recovers_the_weaker_ap() {
    // LED 2 sits about 10 dB below LED 1 here.
    let sc = Scenario::default();
    let p = Point2::new(0.72, 0.4);
    let with = Receiver::new(&sc, &ReceiverSpec::default()).unwrap();
    let without = Receiver::new(&sc, &ReceiverSpec { cancellation: false, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let (mut a, mut b) = (0, 0);
    for _ in 0..5 {
        let s = stream(&sc, p, Comparator::Linear, false, &mut rng);
        a += ids(&with, &s).contains(&2) as usize;
        b += ids(&without, &s).contains(&2) as usize;
    }
    assert_eq!(a, 5);
    assert!(b < a);
}
