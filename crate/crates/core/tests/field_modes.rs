use num_complex::Complex64;
use photonq::field::{FieldError, HENE_WAVELENGTH};
use photonq::io::{field_from_csv, field_to_csv, GrayImage};
use photonq::modes::{self, BeamParams, OamSpectrum, VortexBasis};
use photonq::{ComplexField, GridSpec, PhaseMask};
use proptest::prelude::*;
use std::f64::consts::PI;

fn small_grid() -> GridSpec {
    GridSpec::square(64, 1e-3, HENE_WAVELENGTH).unwrap()
}

fn mode_grid() -> GridSpec {
    GridSpec::square(256, 5.12e-3, HENE_WAVELENGTH).unwrap()
}

const RADIUS: f64 = 2.0e-3;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lens_transform_conserves_power(seed in any::<u64>(), focal in 0.05f64..1.0) {
        let g = small_grid();
        let mut s = seed;
        let data: Vec<Complex64> = (0..g.len())
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let a = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let b = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                Complex64::new(a, b)
            })
            .collect();
        let f = ComplexField::new(g, data).unwrap();
        let p0 = f.power();
        let p1 = f.lens_fourier(focal).unwrap().power();
        prop_assert!((p1 - p0).abs() <= 1e-10 * p0, "{p0} vs {p1}");
    }

    #[test]
    fn field_csv_roundtrips(re in prop::collection::vec(-1e3f64..1e3, 32 * 34), im in prop::collection::vec(-1e-9f64..1e-9, 32 * 34)) {
        let g = GridSpec::new(32, 34, 1e-3, 2e-3, HENE_WAVELENGTH).unwrap();
        let f = ComplexField::new(g, re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect()).unwrap();
        let back = field_from_csv(g, &field_to_csv(&f)).unwrap();
        prop_assert_eq!(back.data(), f.data());
    }

    #[test]
    fn pgm_roundtrips(w in 1usize..9, h in 1usize..9, seed in any::<u16>()) {
        let data = (0..w * h).map(|k| seed.wrapping_mul(k as u16 + 7)).collect();
        let img = GrayImage { width: w, height: h, maxval: 65535, data };
        prop_assert_eq!(GrayImage::from_pgm(&img.to_pgm()).unwrap(), img);
    }

    #[test]
    fn decompose_inverts_synthesize(seed in any::<u32>()) {
        let basis = VortexBasis::get(&mode_grid(), RADIUS).unwrap();
        let band = 6;
        let spec = OamSpectrum::from_fn(band, |l| {
            let t = (seed as f64 * 1e-3 + l as f64 * 1.7).sin();
            Complex64::new(t, (l as f64 * 0.3 + seed as f64).cos())
        })
        .unwrap()
        .normalized()
        .unwrap();
        let field = basis.synthesize(&spec).unwrap();
        let back = basis.decompose(&field, band).unwrap();
        for (a, b) in spec.coeffs().iter().zip(back.coeffs()) {
            prop_assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn gaussian_far_field_matches_analytic_waist() {
    let g = GridSpec::square(256, 8e-3, HENE_WAVELENGTH).unwrap();
    let beam = BeamParams { waist: 0.5e-3, ..BeamParams::default() };
    let f = modes::lg_mode(0, &beam, 0.0, &g).unwrap();
    let focal = 0.5;
    let far = f.lens_fourier(focal).unwrap();
    let wf = HENE_WAVELENGTH * focal / (PI * beam.waist);
    let fg = *far.grid();
    let expected = ComplexField::from_fn(fg, |u, v| Complex64::new((-(u * u + v * v) / (wf * wf)).exp(), 0.0)).unwrap().normalized().unwrap();
    let overlap = expected.inner_product(&far).unwrap().norm_sqr();
    assert!(overlap > 1.0 - 1e-9, "overlap {overlap}");
}

#[test]
fn lg_modes_are_normalized_and_carry_their_charge() {
    let g = mode_grid();
    for ell in [-3, 0, 2, 5] {
        for z in [0.0, 0.5] {
            let f = modes::lg_mode(ell, &BeamParams::default(), z, &g).unwrap();
            assert!((f.power() - 1.0).abs() < 1e-12);
            let spec = modes::decompose_oam(&f, 8, RADIUS).unwrap();
            let dominant = spec.get(ell).unwrap().norm_sqr() / spec.norm_sqr();
            assert!(dominant > 0.999, "ℓ = {ell}, z = {z}: {dominant}");
        }
    }
}

#[test]
fn lg_radial_orders_are_orthogonal() {
    let g = GridSpec::square(256, 12e-3, HENE_WAVELENGTH).unwrap();
    let p0 = modes::lg_mode(1, &BeamParams::default(), 0.0, &g).unwrap();
    let p1 = modes::lg_mode(1, &BeamParams { radial_index: 1, ..BeamParams::default() }, 0.0, &g).unwrap();
    assert!(p0.inner_product(&p1).unwrap().norm() < 1e-9);
}

#[test]
fn vortex_modes_are_orthonormal() {
    let basis = VortexBasis::get(&mode_grid(), RADIUS).unwrap();
    let modes: Vec<_> = (-6..=6).map(|l| basis.mode(l).unwrap()).collect();
    for (a, fa) in modes.iter().enumerate() {
        for (b, fb) in modes.iter().enumerate() {
            let ip = fa.inner_product(fb).unwrap();
            let want = if a == b { 1.0 } else { 0.0 };
            assert!((ip - want).norm() < 1e-10, "⟨{a}|{b}⟩ = {ip}");
        }
    }
}

#[test]
fn vortex_phase_winds_by_charge() {
    let g = mode_grid();
    for ell in [-4, -1, 1, 3] {
        let f = modes::vortex_mode(ell, RADIUS, &g).unwrap();
        let w = f.winding_phase(0.5 * RADIUS, 720);
        assert!((w - 2.0 * PI * ell as f64).abs() < 1e-6, "ℓ = {ell}: {w}");
    }
}

#[test]
fn ang_modes_are_unbiased_to_oam() {
    let g = mode_grid();
    let band = 4;
    let d = (2 * band + 1) as f64;
    let basis = VortexBasis::get(&g, RADIUS).unwrap();
    let angs: Vec<_> = (0..2 * band + 1).map(|n| modes::ang_mode(n, band, RADIUS, &g).unwrap()).collect();
    for (n, theta) in angs.iter().enumerate() {
        for ell in -band..=band {
            let p = basis.mode(ell).unwrap().inner_product(theta).unwrap().norm_sqr();
            assert!((p - 1.0 / d).abs() < 1e-4, "n = {n}, ℓ = {ell}: {p}");
        }
        for (m, other) in angs.iter().enumerate().skip(n + 1) {
            assert!(theta.inner_product(other).unwrap().norm() < 1e-10, "⟨Θ{n}|Θ{m}⟩");
        }
    }
}

#[test]
fn ang_index_and_band_are_checked() {
    assert!(modes::ang_spectrum(9, 4).is_err());
    assert!(modes::ang_spectrum(-1, 4).is_err());
    assert!(modes::decompose_oam(&modes::vortex_mode(0, RADIUS, &mode_grid()).unwrap(), 40, RADIUS).is_err());
}

#[test]
fn forked_hologram_has_charge_many_dislocations() {
    let g = mode_grid();
    for ell in [1, 2, 5] {
        let mask = modes::forked_hologram(ell, 200e-6, &g).unwrap();
        assert_eq!(modes::fork_dislocations(&mask, 10.0), ell as usize);
    }
    assert!(modes::forked_hologram(1, 2.0 * g.dx(), &g).is_err());
}

#[test]
fn forked_hologram_first_order_carries_the_charge() {
    let g = mode_grid();
    let period = 160e-6;
    let mask = modes::forked_hologram(2, period, &g).unwrap();
    let gauss = modes::lg_mode(0, &BeamParams { waist: 0.8e-3, ..BeamParams::default() }, 0.0, &g).unwrap();
    let out = gauss.apply_mask(&mask).unwrap();
    // Remove the carrier so the first order sits on axis.
    let carrier = PhaseMask::from_fn(g, |x, _| -2.0 * PI * x / period).unwrap();
    let first = out.apply_mask(&carrier).unwrap();
    let spec = modes::decompose_oam(&first, 6, RADIUS).unwrap();
    let best = spec.iter().max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr())).unwrap().0;
    assert_eq!(best, 2);
}

#[test]
fn grid_and_field_validation() {
    assert!(GridSpec::new(0, 4, 1e-3, 1e-3, HENE_WAVELENGTH).is_err());
    assert!(GridSpec::new(4, 4, -1e-3, 1e-3, HENE_WAVELENGTH).is_err());
    let g = small_grid();
    assert!(matches!(ComplexField::new(g, vec![Complex64::new(0.0, 0.0); 3]), Err(FieldError::ShapeMismatch { .. })));
    let h = GridSpec::square(32, 1e-3, HENE_WAVELENGTH).unwrap();
    assert_eq!(ComplexField::zeros(g).inner_product(&ComplexField::zeros(h)), Err(FieldError::GridMismatch));
    assert_eq!(ComplexField::zeros(g).normalized(), Err(FieldError::ZeroField));
    let json = r#"{"nx":4,"ny":4,"extent_x":1e-3,"extent_y":1e-3,"wavelength":6e-7,"pitch":1}"#;
    assert!(serde_json::from_str::<GridSpec>(json).is_err());
}

#[test]
fn lens_transform_refuses_to_alias() {
    let g = GridSpec::square(64, 4e-3, HENE_WAVELENGTH).unwrap();
    let f = ComplexField::from_fn(g, |_, _| Complex64::new(1.0, 0.0)).unwrap();
    assert!(matches!(f.lens_fourier(0.01), Err(FieldError::Aliasing { .. })));
    assert!(matches!(f.lens_fourier(-1.0), Err(FieldError::InvalidFocalLength(_))));
}
