//! Laguerre-Gaussian, vortex and angular-position (ANG) modes, forked holograms
//! and azimuthal decomposition into OAM spectra.
//!
//! Vortex modes are hard-edged disks carrying `exp(iℓθ)`. Point-sampled on a
//! square lattice, raw disks with `Δℓ ≡ 0 (mod 4)` overlap at the 1e−4 level,
//! so [`VortexBasis`] applies a symmetric (Löwdin) orthonormalization over the
//! band `|ℓ| ≤ 64`. The corrected modes differ from the raw disks by
//! `O(1e−4)` admixtures and are orthonormal to rounding error.

use crate::field::{ComplexField, FieldError, GridSpec, PhaseMask};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use std::sync::LazyLock;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Largest `|ℓ|` represented by the orthonormalized vortex basis.
pub const BASIS_BAND: i32 = 64;
const MAX_LG_ELL: i32 = 64;
const MAX_LG_P: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("aperture radius {radius:.4e} m exceeds {limit:.4e} m (grid half-extent less a 10% margin)")]
    ApertureTooLarge { radius: f64, limit: f64 },
    #[error("band {band} too large: limit is {limit}")]
    BandTooLarge { band: i32, limit: i32 },
    #[error("ℓ = {ell} lies outside the band ±{band}")]
    OutOfBand { ell: i32, band: i32 },
    #[error("spectrum has zero norm")]
    ZeroSpectrum,
}

/// Complex OAM amplitudes `a_ℓ` for `ℓ = −L..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OamSpectrum {
    band: i32,
    coeffs: Vec<Complex64>,
}

impl OamSpectrum {
    pub fn new(band: i32, coeffs: Vec<Complex64>) -> Result<Self, ModeError> {
        if band < 0 {
            return Err(ModeError::InvalidParameter(format!("band {band} must be non-negative")));
        }
        if coeffs.len() != (2 * band + 1) as usize {
            return Err(ModeError::InvalidParameter(format!(
                "band {band} needs {} coefficients, got {}",
                2 * band + 1,
                coeffs.len()
            )));
        }
        Ok(Self { band, coeffs })
    }

    /// Builds a spectrum from `f(ℓ)` over the band.
    pub fn from_fn(band: i32, f: impl Fn(i32) -> Complex64) -> Result<Self, ModeError> {
        Self::new(band, (-band..=band).map(f).collect())
    }

    pub fn band(&self) -> i32 {
        self.band
    }
    pub fn dimension(&self) -> usize {
        self.coeffs.len()
    }
    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn get(&self, ell: i32) -> Result<Complex64, ModeError> {
        if ell.abs() > self.band {
            return Err(ModeError::OutOfBand { ell, band: self.band });
        }
        Ok(self.coeffs[(ell + self.band) as usize])
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, Complex64)> + '_ {
        self.coeffs.iter().enumerate().map(move |(k, c)| (k as i32 - self.band, *c))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= 1e-9
    }

    pub fn normalized(&self) -> Result<Self, ModeError> {
        let n = self.norm_sqr().sqrt();
        if !(n > 0.0) {
            return Err(ModeError::ZeroSpectrum);
        }
        Ok(Self { band: self.band, coeffs: self.coeffs.iter().map(|c| c / n).collect() })
    }
}

/// Beam parameters shared by LG and vortex modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamParams {
    /// Gaussian waist `w0` (m).
    pub waist: f64,
    /// Radial index `p`.
    pub radial_index: u32,
    /// Vortex aperture radius `R` (m).
    pub aperture: f64,
}

impl Default for BeamParams {
    fn default() -> Self {
        Self { waist: 1.0e-3, radial_index: 0, aperture: 4.0e-3 }
    }
}

/// Generalized Laguerre polynomial `L_p^α(x)` by the three-term recurrence.
pub fn laguerre(p: u32, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if p == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..p {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Normalized Laguerre-Gaussian mode `LG_ℓ^p` at propagation distance `z`.
///
/// Uses `L_p^{|ℓ|}`, the curvature phase `exp(−ikρ²z/(2(z²+z_R²)))` and the
/// Gouy phase `exp(i(2p+|ℓ|+1)·atan(z/z_R))`.
pub fn lg_mode(ell: i32, params: &BeamParams, z: f64, grid: &GridSpec) -> Result<ComplexField, ModeError> {
    if ell.abs() > MAX_LG_ELL || params.radial_index > MAX_LG_P {
        return Err(ModeError::InvalidParameter(format!(
            "LG evaluation limited to |ℓ| ≤ {MAX_LG_ELL}, p ≤ {MAX_LG_P}; got ℓ = {ell}, p = {}",
            params.radial_index
        )));
    }
    if !(params.waist.is_finite() && params.waist > 0.0 && z.is_finite()) {
        return Err(ModeError::InvalidParameter("waist must be positive and z finite".into()));
    }
    let lambda = grid.wavelength();
    let k = 2.0 * PI / lambda;
    let w0 = params.waist;
    let zr = PI * w0 * w0 / lambda;
    let w = w0 * (1.0 + (z / zr).powi(2)).sqrt();
    let p = params.radial_index;
    let al = ell.unsigned_abs() as i32;
    let gouy = (2 * p as i32 + al + 1) as f64 * (z / zr).atan();
    let curv = k * z / (2.0 * (z * z + zr * zr));
    let f = ComplexField::from_fn(*grid, |x, y| {
        let rho2 = x * x + y * y;
        let s = 2.0 * rho2 / (w * w);
        let amp = s.sqrt().powi(al) * laguerre(p, al as f64, s) * (-rho2 / (w * w)).exp() / w;
        let phase = -curv * rho2 + gouy + ell as f64 * y.atan2(x);
        Complex64::from_polar(amp, phase)
    })?;
    Ok(f.normalized()?)
}

fn aperture_limit(grid: &GridSpec) -> f64 {
    0.45 * grid.extent_x().min(grid.extent_y())
}

// ---------------------------------------------------------------------------
// Orthonormal vortex basis
// ---------------------------------------------------------------------------

/// Orthonormalized vortex modes `|ℓ| ≤ 64` of one aperture on one grid.
///
/// Raw mode `m` is the disk `r ≤ R` carrying `exp(imθ)`; the origin pixel is
/// kept only for `m = 0`. Reflection symmetry of the centred lattice makes the
/// raw Gram matrix real and zero between opposite parities of `m`, which is
/// used when it is assembled.
#[derive(Debug)]
pub struct VortexBasis {
    grid: GridSpec,
    radius: f64,
    pixels: Vec<usize>,
    theta: Vec<f64>,
    origin: usize,
    count: f64,
    /// `S^{−1/2}`, indexed `(m + 64, ℓ + 64)`.
    coef: DMatrix<f64>,
}

type BasisKey = (usize, usize, u64, u64, u64);
static BASES: LazyLock<Mutex<HashMap<BasisKey, Arc<VortexBasis>>>> = LazyLock::new(|| Mutex::new(HashMap::new()));

impl VortexBasis {
    /// Shared basis for `(grid, radius)`, built on first use.
    pub fn get(grid: &GridSpec, radius: f64) -> Result<Arc<VortexBasis>, ModeError> {
        let key = (grid.nx(), grid.ny(), grid.extent_x().to_bits(), grid.extent_y().to_bits(), radius.to_bits());
        if let Some(b) = BASES.lock().expect("basis cache poisoned").get(&key) {
            return Ok(b.clone());
        }
        let b = Arc::new(Self::build(grid, radius)?);
        BASES.lock().expect("basis cache poisoned").insert(key, b.clone());
        Ok(b)
    }

    fn build(grid: &GridSpec, radius: f64) -> Result<Self, ModeError> {
        let limit = aperture_limit(grid);
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ModeError::InvalidParameter(format!("aperture radius {radius} must be positive")));
        }
        if radius > limit {
            return Err(ModeError::ApertureTooLarge { radius, limit });
        }
        let origin = grid.index(grid.nx() / 2, grid.ny() / 2);
        let mut pixels = Vec::new();
        let mut theta = Vec::new();
        for j in 0..grid.ny() {
            let y = grid.y(j);
            for i in 0..grid.nx() {
                let x = grid.x(i);
                let idx = grid.index(i, j);
                if idx != origin && x.hypot(y) <= radius {
                    pixels.push(idx);
                    theta.push(y.atan2(x));
                }
            }
        }
        let count = pixels.len() as f64;
        let nb = BASIS_BAND as usize;
        // g[k] = Σ cos(2kθ) over the punctured disk.
        let mut g = vec![0.0; 2 * nb + 1];
        for &t in &theta {
            let step = Complex64::cis(2.0 * t);
            let mut p = Complex64::new(1.0, 0.0);
            for gk in g.iter_mut().take(nb + 1) {
                *gk += p.re;
                p *= step;
            }
        }
        let dim = 2 * nb + 1;
        let norm = |m: i32| if m == 0 { count + 1.0 } else { count };
        let s = DMatrix::from_fn(dim, dim, |a, b| {
            let (la, lb) = (a as i32 - BASIS_BAND, b as i32 - BASIS_BAND);
            let d = (la - lb).unsigned_abs() as usize;
            if d % 2 == 1 {
                return 0.0;
            }
            let mut v = g[d / 2];
            if la == 0 && lb == 0 {
                v += 1.0;
            }
            v / (norm(la) * norm(lb)).sqrt()
        });
        let eig = SymmetricEigen::new(s);
        let inv_sqrt = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
        let coef = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
        Ok(Self { grid: *grid, radius, pixels, theta, origin, count, coef })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn raw_norm(&self, m: i32) -> f64 {
        let n = if m == 0 { self.count + 1.0 } else { self.count };
        (n * self.grid.pixel_area()).sqrt()
    }

    fn check_band(ell: i32) -> Result<(), ModeError> {
        if ell.abs() > BASIS_BAND {
            return Err(ModeError::OutOfBand { ell, band: BASIS_BAND });
        }
        Ok(())
    }

    /// Orthonormal mode `Ψ_ℓ`.
    pub fn mode(&self, ell: i32) -> Result<ComplexField, ModeError> {
        Self::check_band(ell)?;
        let col = (ell + BASIS_BAND) as usize;
        let raw: Vec<Complex64> = (0..self.coef.nrows()).map(|m| Complex64::new(self.coef[(m, col)], 0.0)).collect();
        Ok(self.synthesize_raw(&raw))
    }

    /// `Σ_ℓ a_ℓ Ψ_ℓ` for a spectrum inside the basis band.
    pub fn synthesize(&self, spectrum: &OamSpectrum) -> Result<ComplexField, ModeError> {
        if spectrum.band() > BASIS_BAND {
            return Err(ModeError::BandTooLarge { band: spectrum.band(), limit: BASIS_BAND });
        }
        let mut raw = vec![Complex64::new(0.0, 0.0); self.coef.nrows()];
        for (ell, a) in spectrum.iter() {
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            let col = (ell + BASIS_BAND) as usize;
            for (m, r) in raw.iter_mut().enumerate() {
                *r += a * self.coef[(m, col)];
            }
        }
        Ok(self.synthesize_raw(&raw))
    }

    /// Field `Σ_m raw_m·exp(imθ)/‖·‖` over the disk for raw coefficients indexed `m + 64`.
    fn synthesize_raw(&self, raw: &[Complex64]) -> ComplexField {
        let scaled: Vec<(i32, Complex64)> = raw
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm_sqr() > 0.0)
            .map(|(k, c)| {
                let m = k as i32 - BASIS_BAND;
                (m, c / self.raw_norm(m))
            })
            .collect();
        let mut data = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        if scaled.is_empty() {
            return ComplexField::from_parts(self.grid, data);
        }
        let lo = scaled[0].0;
        let hi = scaled[scaled.len() - 1].0;
        let step = scaled.iter().fold(0, |g, (m, _)| gcd(g, m - lo)).max(1);
        let span = ((hi - lo) / step) as usize + 1;
        let mut dense = vec![Complex64::new(0.0, 0.0); span];
        for (m, c) in &scaled {
            dense[((m - lo) / step) as usize] = *c;
        }
        for (&idx, &t) in self.pixels.iter().zip(&self.theta) {
            let inc = Complex64::cis(step as f64 * t);
            let mut z = Complex64::cis(lo as f64 * t);
            let mut acc = Complex64::new(0.0, 0.0);
            for c in &dense {
                acc += c * z;
                z *= inc;
            }
            data[idx] = acc;
        }
        if let Some((_, c0)) = scaled.iter().find(|(m, _)| *m == 0) {
            data[self.origin] = *c0;
        }
        ComplexField::from_parts(self.grid, data)
    }

    /// Projections `a_ℓ = ⟨Ψ_ℓ|f⟩` for `|ℓ| ≤ band`.
    ///
    /// Azimuthal sums `Σ f·exp(−imθ)` are accumulated pixel by pixel over the
    /// disk and combined through the orthonormalizing transform, so the result
    /// equals the inner product with [`VortexBasis::mode`] to rounding error.
    pub fn decompose(&self, f: &ComplexField, band: i32) -> Result<OamSpectrum, ModeError> {
        if !f.grid().matches(&self.grid) {
            return Err(FieldError::GridMismatch.into());
        }
        if band < 0 || band > BASIS_BAND {
            return Err(ModeError::BandTooLarge { band, limit: BASIS_BAND });
        }
        let dim = self.coef.nrows();
        let mut sums = vec![Complex64::new(0.0, 0.0); dim];
        let data = f.data();
        for (&idx, &t) in self.pixels.iter().zip(&self.theta) {
            let v = data[idx];
            if v.norm_sqr() == 0.0 {
                continue;
            }
            let inc = Complex64::cis(-t);
            let mut z = v * Complex64::cis(BASIS_BAND as f64 * t);
            for s in sums.iter_mut() {
                *s += z;
                z *= inc;
            }
        }
        sums[BASIS_BAND as usize] += data[self.origin];
        let da = self.grid.pixel_area();
        let proj: Vec<Complex64> = sums
            .iter()
            .enumerate()
            .map(|(k, s)| s * da / self.raw_norm(k as i32 - BASIS_BAND))
            .collect();
        OamSpectrum::from_fn(band, |ell| {
            let col = (ell + BASIS_BAND) as usize;
            (0..dim).map(|m| proj[m] * self.coef[(m, col)]).sum()
        })
    }
}

fn gcd(a: i32, b: i32) -> i32 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Normalized vortex mode `Ψ_ℓ`: uniform disk of radius `R` with phase `ℓθ`.
pub fn vortex_mode(ell: i32, radius: f64, grid: &GridSpec) -> Result<ComplexField, ModeError> {
    VortexBasis::get(grid, radius)?.mode(ell)
}

/// ANG mode `Θ_n = (2L+1)^{−1/2} Σ_ℓ Ψ_ℓ exp(i2πnℓ/(2L+1))`, `0 ≤ n ≤ 2L`.
pub fn ang_mode(n: i32, band: i32, radius: f64, grid: &GridSpec) -> Result<ComplexField, ModeError> {
    VortexBasis::get(grid, radius)?.synthesize(&ang_spectrum(n, band)?)
}

/// OAM spectrum of ANG mode `n` over band `L`.
pub fn ang_spectrum(n: i32, band: i32) -> Result<OamSpectrum, ModeError> {
    if band < 0 || band > BASIS_BAND {
        return Err(ModeError::BandTooLarge { band, limit: BASIS_BAND });
    }
    if n < 0 || n > 2 * band {
        return Err(ModeError::InvalidParameter(format!("ANG index {n} outside 0..={}", 2 * band)));
    }
    let d = (2 * band + 1) as f64;
    OamSpectrum::from_fn(band, |ell| Complex64::from_polar(1.0 / d.sqrt(), 2.0 * PI * (n * ell) as f64 / d))
}

/// Projections of `f` onto the vortex modes of aperture `radius`, `|ℓ| ≤ band`.
pub fn decompose_oam(f: &ComplexField, band: i32, radius: f64) -> Result<OamSpectrum, ModeError> {
    let limit = (f.grid().nx().min(f.grid().ny()) / 8) as i32;
    if band > limit {
        return Err(ModeError::BandTooLarge { band, limit });
    }
    VortexBasis::get(f.grid(), radius)?.decompose(f, band)
}

// ---------------------------------------------------------------------------
// Holograms
// ---------------------------------------------------------------------------

/// Forked grating `mod(ℓθ + 2πx/Λ, 2π)`.
pub fn forked_hologram(ell: i32, period: f64, grid: &GridSpec) -> Result<PhaseMask, ModeError> {
    if !(period >= 4.0 * grid.dx()) {
        return Err(ModeError::InvalidParameter(format!(
            "grating period {period:.3e} m is under 4 pixels ({:.3e} m)",
            4.0 * grid.dx()
        )));
    }
    Ok(PhaseMask::from_fn(*grid, |x, y| {
        (ell as f64 * y.atan2(x) + 2.0 * PI * x / period).rem_euclid(2.0 * PI)
    })?)
}

/// Number of fork dislocations at the centre of a hologram: the magnitude of
/// the phase winding of `exp(i·phase)` around a loop of `radius_px` pixels.
pub fn fork_dislocations(mask: &PhaseMask, radius_px: f64) -> usize {
    let g = mask.grid();
    let steps = (64.0 * radius_px).ceil().max(256.0) as usize;
    let sample = |t: f64| {
        let i = (radius_px * t.cos()).round() as i64 + (g.nx() / 2) as i64;
        let j = (radius_px * t.sin()).round() as i64 + (g.ny() / 2) as i64;
        mask.at(i as usize, j as usize)
    };
    let mut total = 0.0;
    let mut prev = sample(0.0);
    for s in 1..=steps {
        let cur = sample(2.0 * PI * s as f64 / steps as f64);
        total += (cur - prev + PI).rem_euclid(2.0 * PI) - PI;
        prev = cur;
    }
    (total / (2.0 * PI)).round().abs() as usize
}
