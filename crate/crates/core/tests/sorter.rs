use photonq::field::HENE_WAVELENGTH;
use photonq::modes;
use photonq::sorter::*;
use photonq::GridSpec;
use std::sync::OnceLock;

fn small(copies: usize, basis: SortBasis) -> SorterConfig {
    let grid = GridSpec::square(256, 5.12e-3, HENE_WAVELENGTH).unwrap();
    let mut cfg = SorterConfig::for_grid(grid, copies, basis);
    if basis == SortBasis::Ang {
        cfg.ang_modes = 9;
    }
    cfg
}

fn oam_single() -> &'static CrosstalkMatrix {
    static M: OnceLock<CrosstalkMatrix> = OnceLock::new();
    M.get_or_init(|| crosstalk_matrix(4, &small(1, SortBasis::Oam)).unwrap())
}

#[test]
fn fast_profile_matches_full_propagation() {
    for (copies, basis) in [(1, SortBasis::Oam), (9, SortBasis::Oam), (3, SortBasis::Ang)] {
        let cfg = small(copies, basis);
        let input = modes::vortex_mode(2, cfg.aperture, &cfg.grid).unwrap();
        let det = sort(&input, &cfg).unwrap();
        let g = *det.grid();
        let full: Vec<f64> = (0..g.ny()).map(|j| (0..g.nx()).map(|i| det.at(i, j).norm_sqr()).sum()).collect();
        let (fast, pitch) = detector_profile(&input, &cfg).unwrap();
        assert_eq!(fast.len(), full.len());
        assert!((pitch - g.dy()).abs() < 1e-15 * pitch.max(1.0));
        let (sf, sg): (f64, f64) = (fast.iter().sum(), full.iter().sum());
        for (a, b) in fast.iter().zip(&full) {
            assert!((a / sf - b / sg).abs() < 1e-10, "{copies} {basis:?}");
        }
    }
}

#[test]
fn sorter_conserves_power() {
    for (copies, basis) in [(1, SortBasis::Oam), (3, SortBasis::Oam), (9, SortBasis::Oam), (1, SortBasis::Ang), (9, SortBasis::Ang)] {
        let cfg = small(copies, basis);
        let input = modes::vortex_mode(-3, cfg.aperture, &cfg.grid).unwrap();
        let (p0, p1, p2) = pipeline_powers(&input, &cfg).unwrap();
        assert!((p1 - p0).abs() < 1e-8 * p0, "transform plane {p1} vs {p0}");
        assert!((p2 - p0).abs() < 1e-8 * p0, "detector {p2} vs {p0}");
    }
}

#[test]
fn crosstalk_rows_are_distributions() {
    let m = oam_single();
    for row in m.rows() {
        assert!(row.iter().all(|p| *p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(m.send_labels(), &(-4..=4).collect::<Vec<_>>()[..]);
}

#[test]
fn oam_sorting_is_diagonally_dominant() {
    let single = oam_single();
    let nine = crosstalk_matrix(4, &small(9, SortBasis::Oam)).unwrap();
    for m in [single, &nine] {
        for &l in m.send_labels() {
            let own = m.prob(l, l).unwrap();
            for &b in m.bin_labels() {
                if b != l {
                    assert!(own > m.prob(l, b).unwrap(), "ℓ = {l} bin {b}");
                }
            }
        }
    }
    assert!(nine.mean_diagonal() > single.mean_diagonal());
    assert!(nine.mutual_information_detected() > single.mutual_information_detected());
}

#[test]
fn ang_sorting_is_diagonally_dominant() {
    for copies in [1, 9] {
        let m = crosstalk_matrix(4, &small(copies, SortBasis::Ang)).unwrap();
        for &n in m.send_labels() {
            let own = m.prob(n, n).unwrap();
            assert!(m.bin_labels().iter().filter(|b| **b != n).all(|b| own > m.prob(n, *b).unwrap()), "copies {copies}, n = {n}");
        }
    }
}

#[test]
fn spot_centroid_is_linear_in_charge() {
    let cfg = small(1, SortBasis::Oam);
    let pitch = cfg.spot_pitch();
    let cs: Vec<f64> = (-3..=3)
        .map(|l| {
            let input = modes::vortex_mode(l, cfg.aperture, &cfg.grid).unwrap();
            let (profile, dy) = detector_profile(&input, &cfg).unwrap();
            centroid(&profile, dy, l as f64 * pitch, 0.5 * pitch)
        })
        .collect();
    for (k, c) in cs.iter().enumerate() {
        let l = k as f64 - 3.0;
        assert!((c - l * pitch).abs() < 0.1 * pitch, "ℓ = {l}: {c} vs {}", l * pitch);
    }
}

#[test]
fn corrector_sharpens_the_spots() {
    let on = small(1, SortBasis::Oam);
    let off = SorterConfig { corrector: false, ..on.clone() };
    let with = crosstalk_matrix(3, &on).unwrap();
    let without = crosstalk_matrix(3, &off).unwrap();
    assert!(with.mean_diagonal() > without.mean_diagonal() + 0.1, "{} vs {}", with.mean_diagonal(), without.mean_diagonal());
}

#[test]
fn invalid_geometries_are_rejected() {
    let base = small(1, SortBasis::Oam);
    assert!(matches!(base.clone().with_copies(5).validate(), Err(SorterError::UnsupportedCopies(5))));
    assert!(SorterConfig { a: -1.0, ..base.clone() }.validate().is_err());
    assert!(SorterConfig { a: base.a * 2.0, ..base.clone() }.validate().is_err(), "strip wider than the plane");
    assert!(SorterConfig { aperture: 1.0, ..base.clone() }.validate().is_err(), "aperture beyond the lens sampling limit");
    assert!(SorterConfig { rows: Some(100), ..base.clone() }.validate().is_err());
    let ang = small(1, SortBasis::Ang);
    assert!(crosstalk_matrix(5, &ang).is_err(), "ANG layout built for 9 modes");
    let other = GridSpec::square(128, 5.12e-3, HENE_WAVELENGTH).unwrap();
    assert!(sort(&modes::vortex_mode(0, 1e-3, &other).unwrap(), &base).is_err());
}

#[test]
fn designed_fanouts_split_evenly() {
    for copies in [3, 9] {
        let spec = FanoutSpec::designed(copies, 1e-3).unwrap();
        let c = spec.order_coefficients();
        let m = c.len() / 2;
        let orders: Vec<f64> = (0..copies).map(|k| c[m + k - copies / 2].norm_sqr()).collect();
        let total: f64 = orders.iter().sum();
        assert!((spec.efficiency() - total).abs() < 1e-9);
        let (lo, hi) = orders.iter().fold((f64::MAX, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(hi / lo <= 1.02, "{copies}: {orders:?}");
    }
    assert!(FanoutSpec::designed(9, 1e-3).unwrap().efficiency() >= 0.99);
}

#[test]
fn crosstalk_csv_roundtrips() {
    let m = oam_single();
    let back = CrosstalkMatrix::from_csv(&m.to_csv()).unwrap();
    assert_eq!(&back, m);
    assert!(CrosstalkMatrix::from_csv("sent,0,loss\n0,0.5,0.2\n").is_err(), "row does not sum to one");
}
