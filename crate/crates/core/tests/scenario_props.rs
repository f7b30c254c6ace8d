use std::collections::BTreeSet;

use proptest::prelude::*;
use vlcbc::scenario::{assign_frequency_pairs, cell_radius, cells_covering, default_palette, CellGraph, PairAssignment};
use vlcbc::{LedId, Point2, Scenario, ScenarioConfig};

#[test]
fn reference_coverage_examples() {
    let sc = Scenario::default();
    assert_eq!(cells_covering(Point2::new(0.4, 0.4), &sc), BTreeSet::from([1]));
    assert_eq!(cells_covering(Point2::new(0.8, 0.4), &sc), BTreeSet::from([1, 2]));
    assert!(cells_covering(Point2::new(2.5, 2.5), &sc).is_empty());
}

#[test]
fn auto_assignment_matches_reference_layout() {
    let mut cfg = ScenarioConfig::default();
    cfg.leds.pair_assignment = PairAssignment::Mode(vlcbc::scenario::AssignMode::Auto);
    let auto = Scenario::from_config(&cfg).unwrap();
    let fixed = Scenario::default();
    for (a, b) in auto.leds.iter().zip(&fixed.leds) {
        assert_eq!(a.freq_pair, b.freq_pair, "LED {}", a.id);
    }
}

#[test]
fn default_config_parses_from_empty_toml() {
    let cfg = ScenarioConfig::from_toml_str("").unwrap();
    assert_eq!(cfg, ScenarioConfig::default());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radius_shrinks_as_device_rises(h_led in 1.5f64..4.0, a in 0.0f64..1.0, b in 0.0f64..1.0, fov in 10.0f64..80.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let r_lo = cell_radius(h_led, lo * (h_led - 0.01), fov).unwrap();
        let r_hi = cell_radius(h_led, hi * (h_led - 0.01), fov).unwrap();
        prop_assert!(r_hi <= r_lo + 1e-12);
        prop_assert!(r_hi >= 0.0);
    }

    #[test]
    fn radius_grows_with_fov(h_bd in 0.5f64..1.8, f1 in 5.0f64..85.0, f2 in 5.0f64..85.0) {
        let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
        prop_assert!(cell_radius(1.9, h_bd, lo).unwrap() <= cell_radius(1.9, h_bd, hi).unwrap() + 1e-12);
    }

    #[test]
    fn coverage_is_distance_test(x in 0.0f64..2.5, y in 0.0f64..2.5, h in 1.0f64..1.8) {
        let sc = Scenario::default().with_device_height(h).unwrap();
        let p = Point2::new(x, y);
        let r = sc.cell_radius();
        let expect: BTreeSet<LedId> =
            sc.leds.iter().filter(|l| l.position.xy().distance(p) <= r).map(|l| l.id).collect();
        prop_assert_eq!(cells_covering(p, &sc), expect);
    }

    #[test]
    fn coloring_never_shares_pair_across_an_edge(
        centers in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), 1..10),
        radius in 0.1f64..0.8,
    ) {
        let discs: Vec<(LedId, Point2)> =
            centers.iter().enumerate().map(|(i, &(x, y))| (i as LedId + 1, Point2::new(x, y))).collect();
        let graph = CellGraph::from_discs(&discs, radius);
        if let Ok(map) = assign_frequency_pairs(&graph, &default_palette()) {
            prop_assert_eq!(map.len(), discs.len());
            for (a, b) in graph.edges() {
                let (ia, ib) = (graph.ids()[a], graph.ids()[b]);
                prop_assert_ne!(map[&ia], map[&ib]);
            }
        }
    }

    #[test]
    fn config_round_trips_through_toml(w in 1.0f64..6.0, l in 1.0f64..6.0, h_led in 2.0f64..3.5, h_bd in 0.5f64..1.9) {
        let mut cfg = ScenarioConfig::default();
        cfg.room.width = w;
        cfg.room.length = l;
        cfg.leds.height = h_led;
        cfg.leds.positions = cfg.leds.positions.iter().map(|&[x, y]| [x * w / 2.5, y * l / 2.5]).collect();
        cfg.device.height = h_bd;
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(&back, &cfg);
        if let Ok(sc) = Scenario::from_config(&cfg) {
            let resolved = sc.to_config();
            prop_assert_eq!(Scenario::from_config(&resolved).unwrap().to_config(), resolved);
        }
    }
}
