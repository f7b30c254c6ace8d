use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlcbc::rf::PathLossMode;
use vlcbc::scenario::cells_covering;
use vlcbc::tracker::{
    self, InitStrategy, Measurement, MeasurementModel, MotionModel, ParticleFilter, ParticleSet, StateVector, TrackerConfig,
    UpdateOutcome,
};
use vlcbc::{Point2, Scenario};

fn grid_particles(sc: &Scenario, step: f64) -> ParticleSet {
    let mut ps = Vec::new();
    let mut x = step / 2.0;
    while x < sc.room.width {
        let mut y = step / 2.0;
        while y < sc.room.length {
            ps.push(StateVector::at_rest(Point2::new(x, y)));
            y += step;
        }
        x += step;
    }
    ParticleSet::uniform(ps)
}

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn one_step_spread_from_point_mass() {
    let n = 100_000;
    let mut set = ParticleSet::uniform(vec![StateVector::at_rest(Point2::new(1.0, 1.0)); n]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    tracker::predict(&mut set, &MotionModel::default(), &mut rng, false);
    let xs: Vec<f64> = set.particles.iter().map(|p| p.px).collect();
    let ys: Vec<f64> = set.particles.iter().map(|p| p.py).collect();
    for s in [std_dev(&xs), std_dev(&ys)] {
        assert!((s - 0.02).abs() < 0.02 * 0.02, "{s}");
    }
}

#[test]
fn id_mismatch_zeroes_weight() {
    let sc = Scenario::default();
    let model = MeasurementModel::new(&sc);
    let mut set = grid_particles(&sc, 0.05);
    let m = Measurement::new(BTreeSet::from([2]), Some(-135.0));
    assert_eq!(tracker::update_weights(&mut set, &m, &model, 25.0, false), UpdateOutcome::Normalized);
    let led2 = sc.led(2).unwrap().position.xy();
    for (p, &w) in set.particles.iter().zip(&set.weights) {
        if led2.distance(p.position()) > sc.cell_radius() {
            assert_eq!(w, 0.0);
        }
    }
    assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn empty_measurement_keeps_only_uncovered_particles() {
    let sc = Scenario::default();
    let model = MeasurementModel::new(&sc);
    let mut set = grid_particles(&sc, 0.05);
    tracker::update_weights(&mut set, &Measurement::empty(), &model, 25.0, false);
    let outside: Vec<f64> = set
        .particles
        .iter()
        .zip(&set.weights)
        .filter_map(|(p, &w)| if cells_covering(p.position(), &sc).is_empty() { Some(w) } else { assert_eq!(w, 0.0); None })
        .collect();
    assert!(!outside.is_empty());
    let w0 = outside[0];
    assert!(outside.iter().all(|&w| (w - w0).abs() < 1e-15));
}

#[test]
fn measurement_without_ids_has_no_rss() {
    assert_eq!(Measurement::new(BTreeSet::new(), Some(-130.0)).rss_db, None);
    assert_eq!(Measurement::new(BTreeSet::from([1]), Some(f64::NAN)).rss_db, None);
}

#[test]
fn prediction_under_led_one() {
    let sc = Scenario::default();
    let (ids, rss) = tracker::predict_measurement(Point2::new(0.4, 0.4), &sc);
    assert_eq!(ids, BTreeSet::from([1]));
    assert!(rss.unwrap().is_finite());
}

#[test]
fn systematic_resampling_examples() {
    let n = 1000;
    let idx = tracker::systematic_indices(&vec![1.0 / n as f64; n], 0.37);
    assert_eq!(idx, (0..n).collect::<Vec<_>>());
    let mut w = vec![0.0; n];
    w[0] = 0.5;
    w[1] = 0.5;
    let idx = tracker::systematic_indices(&w, 0.73);
    assert_eq!(idx.iter().filter(|&&i| i == 0).count(), 500);
    assert_eq!(idx.iter().filter(|&&i| i == 1).count(), 500);
}

fn config(n: usize) -> TrackerConfig {
    TrackerConfig { num_particles: n, ..Default::default() }
}

fn fixed_measurements(sc: &Scenario, truth: Point2, steps: usize, noise_db: f64, seed: u64) -> Vec<Measurement> {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = cells_covering(truth, sc);
    let i_ac = vlcbc::vlc::effective_ac_amplitude(&vlcbc::vlc::received_ac_amplitudes(sc, truth));
    (0..steps)
        .map(|_| {
            let rss = vlcbc::rf::backscatter_rss_db(sc, truth, i_ac, PathLossMode::Expected, &mut rng)
                .map(|r| if noise_db > 0.0 { r + Normal::new(0.0, noise_db).unwrap().sample(&mut rng) } else { r });
            Measurement::new(ids.clone(), rss)
        })
        .collect()
}

#[test]
fn same_seed_same_track_parallel_or_not() {
    let sc = Scenario::default();
    let ms = fixed_measurements(&sc, Point2::new(0.8, 0.4), 20, 5.0, 2);
    let run = |parallel: bool| {
        let mut pf = ParticleFilter::new(TrackerConfig { parallel, ..config(2000) }, &sc, 9).unwrap();
        ms.iter().map(|m| pf.step(m, &sc).estimate).collect::<Vec<_>>()
    };
    let a = run(false);
    assert_eq!(a, run(false));
    assert_eq!(a, run(true));
    let mut pf = ParticleFilter::new(config(2000), &sc, 10).unwrap();
    let other: Vec<_> = ms.iter().map(|m| pf.step(m, &sc).estimate).collect();
    assert_ne!(a, other);
}

#[test]
fn stationary_truth_converges_inside_cell() {
    let sc = Scenario::default();
    let truth = Point2::new(0.4, 0.4);
    let ms = fixed_measurements(&sc, truth, 50, 5.0, 3);
    let mut pf = ParticleFilter::new(config(5000), &sc, 4).unwrap();
    let mut last = None;
    for m in &ms {
        last = Some(pf.step(m, &sc).estimate.position());
    }
    let err = last.unwrap().distance(truth);
    assert!(err < sc.cell_radius(), "error {err:.3} m");
}

#[test]
fn exact_rss_and_small_process_noise_gives_small_bias() {
    let sc = Scenario::default();
    let truth = Point2::new(1.2, 0.4);
    let ms = fixed_measurements(&sc, truth, 50, 0.0, 5);
    let cfg = TrackerConfig {
        motion: MotionModel { process_noise_std: 0.05, ..Default::default() },
        init: InitStrategy::UniformRoom { velocity_std: 0.05 },
        ..config(5000)
    };
    let mut pf = ParticleFilter::new(cfg, &sc, 6).unwrap();
    let mut errs = Vec::new();
    for m in &ms {
        errs.push(pf.step(m, &sc).estimate.position().distance(truth));
    }
    let tail = errs[40..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.5 * sc.cell_radius(), "mean tail error {tail:.3} m");
}

#[test]
fn rescue_recovers_from_impossible_measurement() {
    let sc = Scenario::default();
    let mut pf = ParticleFilter::new(
        TrackerConfig {
            init: InitStrategy::Gaussian { mean: [2.3, 2.3, 0.0, 0.0], variances: [1e-4, 1e-4, 0.0, 0.0] },
            motion: MotionModel { process_noise_std: 0.0, ..Default::default() },
            ..config(500)
        },
        &sc,
        7,
    )
    .unwrap();
    let m = Measurement::new(BTreeSet::from([1]), None);
    let r = pf.step(&m, &sc);
    assert!(r.rescued);
    assert_eq!(pf.rescues(), 1);
    let c = sc.led(1).unwrap().position.xy();
    assert!(pf.particles().particles.iter().all(|p| p.position().distance(c) <= sc.cell_radius() + 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn systematic_counts_within_one_of_expectation(
        raw in prop::collection::vec(0.0f64..1.0, 1..200),
        u in 0.0f64..1.0,
    ) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-9);
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let n = w.len();
        let idx = tracker::systematic_indices(&w, u);
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
        for (i, &wi) in w.iter().enumerate() {
            let c = idx.iter().filter(|&&j| j == i).count() as f64;
            prop_assert!((c - n as f64 * wi).abs() < 1.0 + 1e-6, "parent {} drew {} for {}", i, c, n as f64 * wi);
        }
    }

    #[test]
    fn noiseless_propagation_is_constant_velocity(
        px in -5.0f64..5.0, py in -5.0f64..5.0, vx in -2.0f64..2.0, vy in -2.0f64..2.0, ts in 0.01f64..1.0,
    ) {
        let m = MotionModel { sample_interval: ts, ..Default::default() };
        let x = m.propagate(StateVector::new(px, py, vx, vy), [0.0, 0.0]);
        prop_assert!((x.px - (px + vx * ts)).abs() < 1e-12);
        prop_assert!((x.py - (py + vy * ts)).abs() < 1e-12);
        prop_assert_eq!((x.vx, x.vy), (vx, vy));
    }

    #[test]
    fn updated_weights_form_a_distribution(
        ids in prop::collection::btree_set(1u8..=6, 0..3),
        rss in -160.0f64..-110.0,
        seed in any::<u64>(),
    ) {
        let sc = Scenario::default();
        let model = MeasurementModel::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParticleSet::initialize(500, &InitStrategy::default(), &sc, &mut rng);
        let m = Measurement::new(ids, Some(rss));
        if tracker::update_weights(&mut set, &m, &model, 25.0, false) == UpdateOutcome::Normalized {
            prop_assert!(set.weights.iter().all(|&w| w >= 0.0 && w.is_finite()));
            prop_assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let ess = set.effective_sample_size();
            prop_assert!((1.0 - 1e-9..=500.0 + 1e-9).contains(&ess));
        }
    }
}
