use num_complex::Complex64;
use proptest::prelude::*;
use vlcbc::rf::{self, PathLossMode};
use vlcbc::vlc;
use vlcbc::{Point2, Scenario};

fn mirror(p: Point2) -> Point2 {
    Point2::new(2.4 - p.x, p.y)
}

#[test]
fn directly_below_led_one_entry_dominates() {
    let sc = Scenario::default();
    let out = vlc::pd_output(&sc, Point2::new(0.4, 0.4));
    let led = &sc.leds[0];
    let h = vlc::lambertian_gain(led, sc.device_pose(Point2::new(0.4, 0.4)), &sc.device).unwrap();
    let expect = sc.device.responsivity * led.optical_power_factor * h * led.modulation_amplitude;
    assert!((out.ac_amplitudes[0] - expect).abs() < 1e-15);
    assert!(out.ac_amplitudes[1..].iter().all(|&a| a == 0.0));
}

#[test]
fn harvest_exceeds_device_draw_at_cell_centre() {
    let sc = Scenario::default();
    assert!(vlc::harvested_power(&sc, Point2::new(1.2, 0.4)) > 4.94e-6);
}

#[test]
fn ideal_switch_gives_unit_modulation_factor() {
    let open = rf::reflection_coefficient(Complex64::new(f64::INFINITY, 0.0), Complex64::new(50.0, 0.0));
    let short = rf::reflection_coefficient(Complex64::new(0.0, 0.0), Complex64::new(50.0, 0.0));
    assert!((rf::modulation_factor(open, short) - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gain_vanishes_exactly_outside_cells(x in 0.0f64..2.5, y in 0.0f64..2.5) {
        let sc = Scenario::default();
        let p = Point2::new(x, y);
        for led in &sc.leds {
            let g = vlc::lambertian_gain(led, sc.device_pose(p), &sc.device).unwrap();
            let inside = led.position.xy().distance(p) <= sc.cell_radius();
            prop_assert!(g >= 0.0);
            prop_assert_eq!(g > 0.0, inside);
        }
    }

    #[test]
    fn effective_amplitude_bounded_by_max_and_sum(a in prop::collection::vec(0.0f64..1e-3, 0..8)) {
        let e = vlc::effective_ac_amplitude(&a);
        let max = a.iter().cloned().fold(0.0, f64::max);
        let sum: f64 = a.iter().sum();
        prop_assert!(e >= max - 1e-18 && e <= sum + 1e-18);
    }

    #[test]
    fn passive_loads_keep_modulation_factor_in_unit_interval(
        r1 in 0.0f64..1e3, x1 in -1e3f64..1e3, r2 in 0.0f64..1e3, x2 in -1e3f64..1e3,
        ra in 1.0f64..200.0, xa in -100.0f64..100.0,
    ) {
        let za = Complex64::new(ra, xa);
        let g1 = rf::reflection_coefficient(Complex64::new(r1, x1), za);
        let g2 = rf::reflection_coefficient(Complex64::new(r2, x2), za);
        prop_assert!(g1.norm() <= 1.0 + 1e-9 && g2.norm() <= 1.0 + 1e-9);
        let m = rf::modulation_factor(g1, g2);
        prop_assert!((0.0..=1.0 + 1e-9).contains(&m));
    }

    #[test]
    fn expected_loss_lies_between_branches(d in 1.0f64..200.0, f in 0.5f64..6.0) {
        let los = rf::pathloss_los_db(d, f).unwrap();
        let nlos = rf::pathloss_nlos_db(d, f).unwrap();
        let e = rf::expected_pathloss_db(d, d, f).unwrap();
        prop_assert!(nlos >= los);
        prop_assert!(e >= los - 1e-9 && e <= nlos + 1e-9);
    }

    #[test]
    fn los_probability_is_a_probability(a in 0.0f64..300.0, b in 0.0f64..300.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (pl, ph) = (rf::los_probability(lo), rf::los_probability(hi));
        prop_assert!((0.0..=1.0).contains(&pl) && (0.0..=1.0).contains(&ph));
        // The only rise is the small jump at the 49 m breakpoint.
        if !(lo <= 49.0 && hi > 49.0) {
            prop_assert!(ph <= pl + 1e-12);
        }
    }

    #[test]
    fn optical_power_is_mirror_symmetric(x in 0.0f64..2.4, y in 0.0f64..2.5) {
        let sc = Scenario::default();
        let p = Point2::new(x, y);
        let (a, b) = (vlc::pd_output(&sc, p), vlc::pd_output(&sc, mirror(p)));
        prop_assert!((a.dc_component - b.dc_component).abs() <= 1e-12 * a.dc_component.max(1e-30));
    }

    #[test]
    fn rss_is_mirror_symmetric(x in 0.0f64..2.4, y in 0.0f64..2.5) {
        // The carrier source and reader both sit on x = 1.2.
        let sc = Scenario::default();
        let p = Point2::new(x, y);
        match (rf::expected_rss_db(&sc, p), rf::expected_rss_db(&sc, mirror(p))) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
            (None, None) => {}
            (a, b) => prop_assert!(false, "asymmetric coverage {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn expected_mode_rss_is_deterministic(x in 0.0f64..2.5, y in 0.0f64..2.5, seed in any::<u64>()) {
        use rand::SeedableRng;
        let sc = Scenario::default();
        let p = Point2::new(x, y);
        let i_ac = vlc::effective_ac_amplitude(&vlc::received_ac_amplitudes(&sc, p));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = rf::backscatter_rss_db(&sc, p, i_ac, PathLossMode::Expected, &mut rng);
        let b = rf::expected_rss_db(&sc, p);
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
