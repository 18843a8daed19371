use photonq::field::HENE_WAVELENGTH;
use photonq::ghostid::*;
use photonq::GridSpec;
use std::sync::OnceLock;

struct Setup {
    objects: ObjectSet,
    plate: HologramPlate,
}

fn setup() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| {
        let grid = GridSpec::square(512, 5.12e-3, HENE_WAVELENGTH).unwrap();
        let objects = ObjectSet::four_shapes(grid).unwrap();
        let plate = record_hologram(&objects).unwrap();
        Setup { objects, plate }
    })
}

/// Summed totals and accidentals on the matched detector and on all others.
#[derive(Default)]
struct Tally {
    runs: usize,
    correct: usize,
    true_total: u64,
    true_acc: u64,
    false_total: u64,
    false_acc: u64,
}

impl Tally {
    fn add(&mut self, r: &CoincidenceReport) {
        self.runs += 1;
        self.correct += (r.identified == r.object) as usize;
        for d in 0..r.totals.len() {
            if d == r.object {
                self.true_total += r.totals[d];
                self.true_acc += r.accidental_counts[d];
            } else {
                self.false_total += r.totals[d];
                self.false_acc += r.accidental_counts[d];
            }
        }
    }
    fn ta_true(&self) -> f64 {
        self.true_total as f64 / self.true_acc as f64
    }
    fn ta_false(&self) -> f64 {
        self.false_total as f64 / self.false_acc as f64
    }
}

fn tally(pairs: u64, accidental: f64, seeds: u64) -> Tally {
    let s = setup();
    let mut t = Tally::default();
    for seed in 0..seeds {
        for k in 0..s.objects.len() {
            t.add(&simulate_ghost_run(&s.objects, k, &s.plate, &FilterGeometry::default(), pairs, accidental, 1000 * seed + k as u64).unwrap());
        }
    }
    t
}

#[test]
fn objects_are_disjoint_and_plate_is_bounded() {
    let s = setup();
    assert!(s.objects.is_disjoint());
    assert!(s.plate.transmittance().iter().all(|t| (0.0..=1.0).contains(t)));
    assert_eq!(s.plate.tilts(), s.objects.tilts());
}

#[test]
fn fringe_visibility_matches_reference_ratio() {
    let s = setup();
    let k = s.objects.len() as f64;
    let r = 1.0 / k.sqrt();
    let expected = 2.0 * r / (1.0 + k * r * r);
    for obj in 0..s.objects.len() {
        let (lo, hi) = s
            .objects
            .mask(obj)
            .iter()
            .zip(s.plate.transmittance())
            .filter(|(m, _)| **m > 0.0)
            .fold((f64::MAX, 0.0f64), |(lo, hi), (_, t)| (lo.min(*t), hi.max(*t)));
        let vis = (hi - lo) / (hi + lo);
        assert!((vis - expected).abs() < 0.05, "object {obj}: {vis} vs {expected}");
    }
}

#[test]
fn matched_order_dominates_cross_orders() {
    let s = setup();
    for obj in 0..s.objects.len() {
        let r = filter_response(&s.objects.object_field(obj), &s.plate, &FilterGeometry::default()).unwrap();
        let matched = r.orders[obj];
        for (d, p) in r.orders.iter().enumerate().filter(|(d, _)| *d != obj) {
            assert!(matched >= 10.0 * p, "object {obj} detector {d}: {matched} vs {p}");
        }
        assert!(r.zero_order + r.orders.iter().sum::<f64>() <= r.total * (1.0 + 1e-12));
    }
}

#[test]
fn identification_succeeds_at_ten_thousand_pairs() {
    let t = tally(10_000, 5.0, 25);
    let rate = t.correct as f64 / t.runs as f64;
    assert!(rate >= 0.99, "{rate}");
    assert!(t.false_total as f64 <= 1.5 * t.false_acc as f64, "{} vs {}", t.false_total, t.false_acc);
    assert!(t.ta_true() >= 5.0 * t.ta_false(), "{} vs {}", t.ta_true(), t.ta_false());
}

#[test]
fn contrast_grows_with_pairs() {
    let ta: Vec<f64> = [1_000, 10_000, 100_000].iter().map(|p| tally(*p, 5.0, 4).ta_true()).collect();
    assert!(ta[0] < ta[1] && ta[1] < ta[2], "{ta:?}");
}

#[test]
fn coincidences_are_conserved_and_reproducible() {
    let s = setup();
    let geom = FilterGeometry::default();
    let a = simulate_ghost_run(&s.objects, 2, &s.plate, &geom, 5_000, 3.0, 9).unwrap();
    assert!(a.true_counts.iter().sum::<u64>() <= a.bucket_clicks);
    assert_eq!(a, simulate_ghost_run(&s.objects, 2, &s.plate, &geom, 5_000, 3.0, 9).unwrap());
    let quiet = simulate_ghost_run(&s.objects, 2, &s.plate, &geom, 5_000, 0.0, 9).unwrap();
    assert!(quiet.accidental_counts.iter().all(|a| *a == 0));
    assert!(quiet.ta_ratios.iter().all(Option::is_none));
    assert!(simulate_ghost_run(&s.objects, 7, &s.plate, &geom, 10, 1.0, 0).is_err());
    assert!(simulate_ghost_run(&s.objects, 0, &s.plate, &geom, 10, -1.0, 0).is_err());
}

#[test]
fn oversized_bins_overlap() {
    let s = setup();
    let geom = FilterGeometry { bin_radius: Some(1e-3), ..FilterGeometry::default() };
    assert!(matches!(filter_response(&s.objects.object_field(0), &s.plate, &geom), Err(GhostError::BinOverlap { .. })));
}
