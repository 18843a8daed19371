use nalgebra::DMatrix;
use num_complex::Complex64;
use photonq::weakmeas::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const WIDTH: f64 = 2.0 * PI / 9.0;

fn reconstruct(truth: &FiniteState, cfg: &DirectMeasConfig) -> FiniteState {
    reconstruct_state(&simulate_direct_measurement(truth, cfg).unwrap()).unwrap()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_state(rng: &mut ChaCha8Rng, d: usize) -> FiniteState {
    FiniteState::new((0..d).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()).unwrap().normalized().unwrap()
}

fn random_hermitian(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<Complex64> {
    let m = DMatrix::from_fn(d, d, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    (&m + m.adjoint()) * c(0.5, 0.0)
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn aperture_state_is_reconstructed_with_sinc_profile() {
    let truth = aperture_state(WIDTH, 0.0, 13).unwrap();
    let rec = reconstruct(&truth, &DirectMeasConfig::default());
    let width = fit_sinc_width(&rec);
    assert!((width - 9.0).abs() < 0.3, "{width}");
    assert_eq!(phase_jumps(&rec), vec![-9.0, 9.0]);
    assert!(rec.fidelity(&truth).unwrap() >= 0.98);
    assert!(rec.is_normalized());
}

#[test]
fn sinc_nulls_sit_at_nine() {
    let truth = aperture_state(WIDTH, 0.0, 13).unwrap();
    let peak = truth.get(0).unwrap().norm_sqr();
    for l in [-9, 9] {
        assert!(truth.get(l).unwrap().norm_sqr() < 1e-30 * peak.max(1.0) + 1e-30, "ℓ = {l}");
    }
    assert!(truth.get(5).unwrap().norm_sqr() > 1e-3 * peak);
}

#[test]
fn rotated_apertures_give_opposite_phase_ramps() {
    let cfg = DirectMeasConfig::default();
    let reference = reconstruct(&aperture_state(WIDTH, 0.0, 13).unwrap(), &cfg);
    for sign in [1.0, -1.0] {
        let rec = reconstruct(&aperture_state(WIDTH, sign * PI / 9.0, 13).unwrap(), &cfg);
        let ramp = fit_phase_ramp(&rec, &reference).unwrap();
        assert!((ramp.slope - sign * 0.349).abs() < 0.01, "{}", ramp.slope);
    }
}

#[test]
fn fidelity_improves_as_coupling_weakens() {
    let truth = aperture_state(WIDTH, 0.4, 13).unwrap();
    let infid = |alpha: f64| 1.0 - reconstruct(&truth, &DirectMeasConfig { alpha, ..DirectMeasConfig::default() }).fidelity(&truth).unwrap();
    assert!(infid(0.01) <= 1e-4);
    assert!(infid(PI / 9.0) <= 0.02);
    // Bias is second order in the coupling: halving α quarters the infidelity.
    let ratio = infid(PI / 18.0) / infid(PI / 9.0);
    assert!(ratio <= 0.35, "{ratio}");
}

#[test]
fn weak_value_expansion_orders() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let eps: Vec<f64> = (0..8).map(|k| 1e-4 * 2f64.powi(k)).collect();
    let mut tested = 0;
    while tested < 24 {
        let d = 2 + tested % 2;
        let (a, i, f) = (random_hermitian(&mut rng, d), random_state(&mut rng, d), random_state(&mut rng, d));
        if f.inner(&i).unwrap().norm() < 0.1 {
            continue;
        }
        let pc: Vec<ProbabilityCorrection> = eps.iter().map(|e| probability_correction(&a, &i, &f, *e).unwrap()).collect();
        let first: Vec<f64> = pc.iter().map(|p| (p.exact - p.first_order).abs()).collect();
        let second: Vec<f64> = pc.iter().map(|p| (p.exact - p.second_order).abs()).collect();
        let (s1, s2) = (loglog_slope(&eps, &first), loglog_slope(&eps, &second));
        assert!((s1 - 2.0).abs() <= 0.1, "first-order slope {s1}");
        assert!((s2 - 3.0).abs() <= 0.2, "second-order slope {s2}");
        tested += 1;
    }
}

#[test]
fn projector_weak_values_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d in [2, 3, 5] {
        let (i, f) = (random_state(&mut rng, d), random_state(&mut rng, d));
        let total: Complex64 = (0..d)
            .map(|k| {
                let p = DMatrix::from_fn(d, d, |r, c2| if r == k && c2 == k { c(1.0, 0.0) } else { c(0.0, 0.0) });
                weak_value(&p, &i, &f, 1).unwrap()
            })
            .sum();
        assert!((total - c(1.0, 0.0)).norm() < 1e-12, "{total}");
    }
    let truth = aperture_state(WIDTH, 0.2, 6).unwrap();
    let est = simulate_direct_measurement(&truth, &DirectMeasConfig { band: 6, alpha: 0.01, ..DirectMeasConfig::default() }).unwrap();
    let total: Complex64 = est.iter().map(|e| e.value).sum();
    // Projectors resolve the identity; the residue is the coupling bias.
    assert!((total - c(1.0, 0.0)).norm() < 1e-3, "{total}");
}

#[test]
fn weak_values_of_orthogonal_states_fail() {
    let i = FiniteState::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
    let f = FiniteState::new(vec![c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
    let a = DMatrix::from_element(2, 2, c(1.0, 0.0));
    assert_eq!(weak_value(&a, &i, &f, 1), Err(WeakError::Orthogonal));
    let big = DMatrix::from_element(3, 3, c(1.0, 0.0));
    assert!(matches!(weak_value(&big, &i, &i, 1), Err(WeakError::Dimension(_))));
}

#[test]
fn shot_noise_shrinks_with_photons() {
    let truth = aperture_state(WIDTH, 0.0, 13).unwrap();
    let run = |photons: u64, seed: u64| {
        let cfg = DirectMeasConfig { photons_per_setting: photons, seed, ..DirectMeasConfig::default() };
        simulate_direct_measurement(&truth, &cfg).unwrap()
    };
    let few = run(10_000, 1);
    let many = run(160_000, 1);
    let mean_err = |e: &[WeakValueEstimate]| e.iter().map(|x| x.re_err).sum::<f64>() / e.len() as f64;
    let ratio = mean_err(&few) / mean_err(&many);
    assert!((ratio - 4.0).abs() < 0.4, "{ratio}");
    let rec = reconstruct_state(&many).unwrap();
    assert!(rec.fidelity(&truth).unwrap() > 0.97);
    assert_eq!(run(10_000, 5), run(10_000, 5));
    assert_ne!(run(10_000, 5), run(10_000, 6));
}

#[test]
fn postselection_scan_peaks_on_the_aperture() {
    let rot = 0.5;
    let truth = aperture_state(WIDTH, rot, 13).unwrap();
    let scan: Vec<(f64, f64)> = (0..720).map(|k| {
        let t = -PI + 2.0 * PI * k as f64 / 720.0;
        (t, postselection_probability(&truth, t))
    }).collect();
    let wrap = |t: f64| (t + PI).rem_euclid(2.0 * PI) - PI;
    let (m, w) = scan.iter().filter(|p| wrap(p.0 - rot).abs() < WIDTH).fold((0.0, 0.0), |(m, w), p| (m + p.0 * p.1, w + p.1));
    assert!((m / w - rot).abs() < 0.01, "centroid {}", m / w);
    let inside: f64 = scan.iter().filter(|p| wrap(p.0 - rot).abs() < WIDTH).map(|p| p.1).sum();
    let all: f64 = scan.iter().map(|p| p.1).sum();
    assert!(inside / all > 0.9, "{}", inside / all);
    let total: f64 = scan.iter().map(|p| p.1).sum::<f64>() / 720.0;
    // Averaged over θ0 the post-selection probability is 1/d.
    assert!((total - 1.0 / 27.0).abs() < 1e-9, "{total}");
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(aperture_state(0.0, 0.0, 5).is_err());
    assert!(aperture_state(WIDTH, 0.0, 0).is_err());
    let truth = aperture_state(WIDTH, 0.0, 5).unwrap();
    assert!(simulate_direct_measurement(&truth, &DirectMeasConfig::default()).is_err(), "band mismatch");
    assert!(simulate_direct_measurement(&truth, &DirectMeasConfig { band: 5, alpha: 2.0, ..DirectMeasConfig::default() }).is_err());
}
