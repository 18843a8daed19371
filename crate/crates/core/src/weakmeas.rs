//! Weak values and direct measurement of an OAM state with a polarization pointer.

use crate::qkd::pulse_rng;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeakError {
    #[error("pre- and post-selected states are orthogonal; weak value undefined")]
    Orthogonal,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("post-selection probability {probability:.3e} below threshold at ℓ = {ell}")]
    PostSelection { ell: i32, probability: f64 },
    #[error("all estimates vanish")]
    ZeroState,
    #[error("only {0} usable modes for the phase fit, need 3")]
    TooFewModes(usize),
}

/// Amplitudes over consecutive integer labels starting at `first_label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteState {
    first_label: i32,
    amps: Vec<Complex64>,
}

impl FiniteState {
    pub fn new(amps: Vec<Complex64>) -> Result<Self, WeakError> {
        Self::with_labels(0, amps)
    }

    /// State over the OAM band `−band..=band`.
    pub fn oam(band: i32, amps: Vec<Complex64>) -> Result<Self, WeakError> {
        if amps.len() != (2 * band + 1) as usize {
            return Err(WeakError::Dimension(format!("{} amplitudes for band {band}", amps.len())));
        }
        Self::with_labels(-band, amps)
    }

    fn with_labels(first_label: i32, amps: Vec<Complex64>) -> Result<Self, WeakError> {
        if amps.is_empty() {
            return Err(WeakError::Dimension("empty state".into()));
        }
        if amps.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(WeakError::InvalidParameter("non-finite amplitude".into()));
        }
        Ok(Self { first_label, amps })
    }

    pub fn dimension(&self) -> usize {
        self.amps.len()
    }
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }
    pub fn labels(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.amps.len() as i32).map(move |k| self.first_label + k)
    }
    pub fn get(&self, label: i32) -> Option<Complex64> {
        usize::try_from(label - self.first_label).ok().and_then(|k| self.amps.get(k).copied())
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= 1e-12
    }

    pub fn normalized(&self) -> Result<Self, WeakError> {
        let n = self.norm();
        if n == 0.0 {
            return Err(WeakError::ZeroState);
        }
        Ok(Self { first_label: self.first_label, amps: self.amps.iter().map(|a| a / n).collect() })
    }

    pub fn inner(&self, other: &FiniteState) -> Result<Complex64, WeakError> {
        self.check_same(other)?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    /// `|⟨a|b⟩|²` of the normalized states.
    pub fn fidelity(&self, other: &FiniteState) -> Result<f64, WeakError> {
        Ok(self.inner(other)?.norm_sqr() / (self.norm() * other.norm()).powi(2))
    }

    fn check_same(&self, other: &FiniteState) -> Result<(), WeakError> {
        if self.first_label != other.first_label || self.amps.len() != other.amps.len() {
            return Err(WeakError::Dimension("states live on different bases".into()));
        }
        Ok(())
    }

    fn vector(&self) -> DVector<Complex64> {
        DVector::from_column_slice(&self.amps)
    }
}

const ORTHOGONAL_TOL: f64 = 1e-12;

fn check_operator(a: &DMatrix<Complex64>, i: &FiniteState, f: &FiniteState) -> Result<Complex64, WeakError> {
    i.check_same(f)?;
    if a.nrows() != i.dimension() || a.ncols() != i.dimension() {
        return Err(WeakError::Dimension(format!("{}×{} operator on dimension {}", a.nrows(), a.ncols(), i.dimension())));
    }
    let fi = f.inner(i)?;
    if fi.norm() <= ORTHOGONAL_TOL {
        return Err(WeakError::Orthogonal);
    }
    Ok(fi)
}

/// `⟨f|Aⁿ|i⟩/⟨f|i⟩`.
pub fn weak_value(a: &DMatrix<Complex64>, i: &FiniteState, f: &FiniteState, order: u32) -> Result<Complex64, WeakError> {
    let fi = check_operator(a, i, f)?;
    let mut v = i.vector();
    for _ in 0..order {
        v = a * v;
    }
    Ok(f.vector().dotc(&v) / fi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityCorrection {
    pub exact: f64,
    pub first_order: f64,
    pub second_order: f64,
}

/// Ratio `|⟨f|e^{−iεA}|i⟩|²/|⟨f|i⟩|²` and its weak-value expansion
/// `1 + 2ε·Im A_w − ε²·(Re (A²)_w − |A_w|²)`.
pub fn probability_correction(
    a: &DMatrix<Complex64>,
    i: &FiniteState,
    f: &FiniteState,
    epsilon: f64,
) -> Result<ProbabilityCorrection, WeakError> {
    let fi = check_operator(a, i, f)?;
    let u = (a * Complex64::new(0.0, -epsilon)).exp();
    let exact = f.vector().dotc(&(u * i.vector())).norm_sqr() / fi.norm_sqr();
    let aw = weak_value(a, i, f, 1)?;
    let a2w = weak_value(a, i, f, 2)?;
    let first_order = 1.0 + 2.0 * epsilon * aw.im;
    let second_order = first_order - epsilon * epsilon * (a2w.re - aw.norm_sqr());
    Ok(ProbabilityCorrection { exact, first_order, second_order })
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-300 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Field after an angular aperture of width `width` rotated by `rotation`:
/// `a_ℓ ∝ sinc(width·ℓ/2)·e^{iℓ·rotation}` over `|ℓ| ≤ band`, normalized.
pub fn aperture_state(width: f64, rotation: f64, band: i32) -> Result<FiniteState, WeakError> {
    if !(width > 0.0 && width <= 2.0 * PI) {
        return Err(WeakError::InvalidParameter(format!("aperture width {width} outside (0, 2π]")));
    }
    if band < 1 {
        return Err(WeakError::InvalidParameter("band must be at least 1".into()));
    }
    let amps = (-band..=band)
        .map(|l| Complex64::from_polar(1.0, l as f64 * rotation) * sinc(width * l as f64 / 2.0))
        .collect();
    FiniteState::oam(band, amps)?.normalized()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectMeasConfig {
    pub band: i32,
    /// Coupling angle; the pointer rotates by `sin α` on the measured mode.
    pub alpha: f64,
    /// Angle of the post-selection projector.
    pub theta0: f64,
    /// Photons per polarization setting; 0 uses exact expectations.
    pub photons_per_setting: u64,
    pub seed: u64,
}

impl Default for DirectMeasConfig {
    fn default() -> Self {
        Self { band: 13, alpha: PI / 9.0, theta0: 0.0, photons_per_setting: 0, seed: 0 }
    }
}

impl DirectMeasConfig {
    pub fn dimension(&self) -> usize {
        (2 * self.band + 1) as usize
    }

    pub fn validate(&self) -> Result<(), WeakError> {
        if self.band < 1 {
            return Err(WeakError::InvalidParameter(format!("band {} < 1", self.band)));
        }
        if !(self.alpha > 0.0 && self.alpha < PI / 2.0) {
            return Err(WeakError::InvalidParameter(format!("alpha {} outside (0, π/2)", self.alpha)));
        }
        if !self.theta0.is_finite() {
            return Err(WeakError::InvalidParameter("theta0 must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakValueEstimate {
    pub ell: i32,
    pub value: Complex64,
    pub re_err: f64,
    pub im_err: f64,
}

const POSTSELECT_TOL: f64 = 1e-9;

/// `⟨θ0|ℓ⟩ = d^{−1/2}·e^{−iℓθ0}`.
fn postselect_amp(ell: i32, theta0: f64, d: usize) -> Complex64 {
    Complex64::from_polar(1.0 / (d as f64).sqrt(), -(ell as f64) * theta0)
}

/// `|⟨θ0|Ψ⟩|²` for the state normalized.
pub fn postselection_probability(state: &FiniteState, theta0: f64) -> f64 {
    let d = state.dimension();
    let t: Complex64 = state.labels().zip(state.amplitudes()).map(|(l, a)| postselect_amp(l, theta0, d) * a).sum();
    t.norm_sqr() / state.norm().powi(2)
}

/// Weak measurement of every projector `π_ℓ` followed by post-selection on `⟨θ0|`.
///
/// The pointer starts in `|V⟩` and the coupling is the exact unitary
/// `exp(i·sin α·π_ℓ⊗σ_y/2)`. Each estimate is `(⟨σx⟩ − i⟨σy⟩)/sin α` of the
/// conditioned pointer.
pub fn simulate_direct_measurement(state: &FiniteState, cfg: &DirectMeasConfig) -> Result<Vec<WeakValueEstimate>, WeakError> {
    cfg.validate()?;
    let d = cfg.dimension();
    if state.dimension() != d || state.first_label != -cfg.band {
        return Err(WeakError::Dimension(format!("state of dimension {} for band {}", state.dimension(), cfg.band)));
    }
    let psi = state.normalized()?;
    let weights: Vec<Complex64> =
        psi.labels().zip(psi.amplitudes()).map(|(l, a)| postselect_amp(l, cfg.theta0, d) * a).collect();
    let total: Complex64 = weights.iter().sum();
    if total.norm() <= POSTSELECT_TOL {
        return Err(WeakError::PostSelection { ell: 0, probability: total.norm_sqr() });
    }
    let s = cfg.alpha.sin();
    let (c2, s2) = ((s / 2.0).cos(), (s / 2.0).sin());
    (0..d)
        .into_par_iter()
        .map(|k| {
            let ell = -cfg.band + k as i32;
            let w = weights[k];
            // Pointer components (H, V) after coupling and post-selection.
            let h = w * s2;
            let v = total - w + w * c2;
            let p = h.norm_sqr() + v.norm_sqr();
            if p <= POSTSELECT_TOL * POSTSELECT_TOL {
                return Err(WeakError::PostSelection { ell, probability: p });
            }
            let hv = h.conj() * v / p;
            let (sx, sy) = (2.0 * hv.re, 2.0 * hv.im);
            if cfg.photons_per_setting == 0 {
                return Ok(WeakValueEstimate { ell, value: Complex64::new(sx, -sy) / s, re_err: 0.0, im_err: 0.0 });
            }
            let n = cfg.photons_per_setting;
            let sample = |mean: f64, setting: u64| -> (f64, f64) {
                let mut rng = pulse_rng(cfg.seed, 2 * k as u64 + setting);
                let plus = ((1.0 + mean) / 2.0).clamp(0.0, 1.0);
                let hits = Binomial::new(n, plus).expect("valid binomial").sample(&mut rng) as f64;
                let q = hits / n as f64;
                (2.0 * q - 1.0, 2.0 * (q * (1.0 - q) / n as f64).sqrt())
            };
            let (ex, ex_err) = sample(sx, 0);
            let (ey, ey_err) = sample(sy, 1);
            Ok(WeakValueEstimate { ell, value: Complex64::new(ex, -ey) / s, re_err: ex_err / s, im_err: ey_err / s })
        })
        .collect()
}

/// Normalized state from estimates, with the largest component real positive.
pub fn reconstruct_state(estimates: &[WeakValueEstimate]) -> Result<FiniteState, WeakError> {
    let Some(first) = estimates.first() else {
        return Err(WeakError::ZeroState);
    };
    if estimates.iter().enumerate().any(|(k, e)| e.ell != first.ell + k as i32) {
        return Err(WeakError::Dimension("estimates must cover consecutive labels in order".into()));
    }
    let peak = estimates.iter().map(|e| e.value).fold(Complex64::new(0.0, 0.0), |m, v| if v.norm() > m.norm() { v } else { m });
    if peak.norm() <= 1e-9 {
        return Err(WeakError::ZeroState);
    }
    let rot = peak.conj() / peak.norm();
    let amps = estimates.iter().map(|e| e.value * rot).collect();
    FiniteState::with_labels(first.ell, amps)?.normalized()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRamp {
    /// Radians per mode.
    pub slope: f64,
    pub intercept: f64,
    pub uncertainty: f64,
    pub modes_used: usize,
}

fn wrap(phi: f64) -> f64 {
    (phi + PI).rem_euclid(2.0 * PI) - PI
}

/// Weighted least-squares fit of `arg(rec_ℓ·conj(ref_ℓ))` against ℓ.
///
/// Weights are `|rec_ℓ|²`; modes under 1e-6 of the peak weight are skipped.
/// Phases are unwrapped outward from the heaviest mode. The uncertainty is
/// the slope's standard error scaled by the reduced chi-square.
pub fn fit_phase_ramp(rec: &FiniteState, reference: &FiniteState) -> Result<PhaseRamp, WeakError> {
    rec.check_same(reference)?;
    let maxw = rec.amps.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
    let pts: Vec<(f64, f64, f64)> = rec
        .labels()
        .zip(rec.amps.iter().zip(&reference.amps))
        .filter(|(_, (a, b))| a.norm_sqr() > 1e-6 * maxw && b.norm() > 0.0)
        .map(|(l, (a, b))| (l as f64, (a * b.conj()).arg(), a.norm_sqr()))
        .collect();
    if pts.len() < 3 {
        return Err(WeakError::TooFewModes(pts.len()));
    }
    let start = (0..pts.len()).max_by(|&i, &j| pts[i].2.total_cmp(&pts[j].2)).unwrap();
    let mut phase = vec![0.0; pts.len()];
    phase[start] = pts[start].1;
    for k in start + 1..pts.len() {
        phase[k] = phase[k - 1] + wrap(pts[k].1 - phase[k - 1]);
    }
    for k in (0..start).rev() {
        phase[k] = phase[k + 1] + wrap(pts[k].1 - phase[k + 1]);
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((x, _, w), y) in pts.iter().zip(&phase) {
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let delta = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / delta;
    let intercept = (sxx * sy - sx * sxy) / delta;
    let chi2: f64 = pts.iter().zip(&phase).map(|((x, _, w), y)| w * (y - intercept - slope * x).powi(2)).sum();
    let dof = (pts.len() - 2) as f64;
    let uncertainty = (chi2 / dof * sw / delta).sqrt();
    Ok(PhaseRamp { slope, intercept, uncertainty, modes_used: pts.len() })
}

/// Width `W` of the best fit `A·sinc²(πℓ/W)` to a probability profile
/// (first nulls at `ℓ = ±W`), searched over `[1, 4·max|ℓ|]`.
pub fn fit_sinc_width(state: &FiniteState) -> f64 {
    let pts: Vec<(f64, f64)> = state.labels().zip(state.amplitudes()).map(|(l, a)| (l as f64, a.norm_sqr())).collect();
    let lmax = pts.iter().fold(1.0f64, |m, p| m.max(p.0.abs()));
    let residual = |w: f64| {
        let model: Vec<f64> = pts.iter().map(|(l, _)| sinc(PI * l / w).powi(2)).collect();
        let amp = pts.iter().zip(&model).map(|(p, m)| p.1 * m).sum::<f64>() / model.iter().map(|m| m * m).sum::<f64>();
        pts.iter().zip(&model).map(|(p, m)| (p.1 - amp * m).powi(2)).sum::<f64>()
    };
    let (mut lo, mut hi) = (1.0, 4.0 * lmax);
    let grid = 400;
    let best = (0..=grid)
        .map(|k| lo + (hi - lo) * k as f64 / grid as f64)
        .min_by(|a, b| residual(*a).total_cmp(&residual(*b)))
        .unwrap();
    let step = (hi - lo) / grid as f64;
    lo = (best - step).max(1.0);
    hi = best + step;
    // Golden-section refinement.
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (hi - g * (hi - lo), lo + g * (hi - lo));
    for _ in 0..100 {
        if residual(a) < residual(b) {
            hi = b;
        } else {
            lo = a;
        }
        a = hi - g * (hi - lo);
        b = lo + g * (hi - lo);
    }
    0.5 * (lo + hi)
}

/// Labels halfway between consecutive significant modes whose phases differ
/// by more than π/2. Modes below `1e-6` of the peak probability are skipped.
pub fn phase_jumps(state: &FiniteState) -> Vec<f64> {
    let maxp = state.amps.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
    let pts: Vec<(i32, f64)> = state
        .labels()
        .zip(&state.amps)
        .filter(|(_, a)| a.norm_sqr() > 1e-6 * maxp)
        .map(|(l, a)| (l, a.arg()))
        .collect();
    pts.windows(2)
        .filter(|w| wrap(w[1].1 - w[0].1).abs() > PI / 2.0)
        .map(|w| 0.5 * (w[0].0 + w[1].0) as f64)
        .collect()
}
