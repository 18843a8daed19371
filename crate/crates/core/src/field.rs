//! Complex scalar fields on uniform grids, phase masks and ideal-lens Fourier transforms.
//!
//! Sample `(i, j)` sits at `x = (i - nx/2)·dx`, `y = (j - ny/2)·dy`, so the
//! optical axis is the sample at index `(nx/2, ny/2)`. Storage is row-major
//! with `y` as the slow index. Every Fourier transform in the crate uses this
//! centering.

use crate::fft;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Errors raised by field-level operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: operands live on different grids")]
    GridMismatch,
    #[error("expected {expected} samples, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("cannot normalize a field with zero power")]
    ZeroField,
    #[error("focal length must be finite and positive, got {0}")]
    InvalidFocalLength(f64),
    #[error(
        "lens transform would alias along {axis}: field support reaches {support:.4e} m but the \
         lens chirp is only resolved to {limit:.4e} m; use focal length ≥ {min_focal:.4e} m"
    )]
    Aliasing { axis: char, support: f64, limit: f64, min_focal: f64 },
}

/// Pixel counts, physical extents (m) and wavelength (m) of a sampling grid.
///
/// The pitch is always derived as `extent / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    extent_x: f64,
    extent_y: f64,
    wavelength: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    nx: usize,
    ny: usize,
    extent_x: f64,
    extent_y: f64,
    wavelength: f64,
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = FieldError;
    fn try_from(r: RawGrid) -> Result<Self, FieldError> {
        GridSpec::new(r.nx, r.ny, r.extent_x, r.extent_y, r.wavelength)
    }
}

impl From<GridSpec> for RawGrid {
    fn from(g: GridSpec) -> Self {
        RawGrid { nx: g.nx, ny: g.ny, extent_x: g.extent_x, extent_y: g.extent_y, wavelength: g.wavelength }
    }
}

/// HeNe wavelength used by default.
pub const HENE_WAVELENGTH: f64 = 632.8e-9;

impl GridSpec {
    pub fn new(nx: usize, ny: usize, extent_x: f64, extent_y: f64, wavelength: f64) -> Result<Self, FieldError> {
        for (name, n) in [("nx", nx), ("ny", ny)] {
            if n < 32 || n % 2 != 0 {
                return Err(FieldError::InvalidGrid(format!("{name} = {n} must be even and at least 32")));
            }
        }
        for (name, v) in [("extent_x", extent_x), ("extent_y", extent_y), ("wavelength", wavelength)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FieldError::InvalidGrid(format!("{name} = {v} must be finite and positive")));
            }
        }
        Ok(Self { nx, ny, extent_x, extent_y, wavelength })
    }

    /// Square grid with `n × n` samples.
    pub fn square(n: usize, extent: f64, wavelength: f64) -> Result<Self, FieldError> {
        Self::new(n, n, extent, extent, wavelength)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn extent_x(&self) -> f64 {
        self.extent_x
    }
    pub fn extent_y(&self) -> f64 {
        self.extent_y
    }
    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }
    pub fn dx(&self) -> f64 {
        self.extent_x / self.nx as f64
    }
    pub fn dy(&self) -> f64 {
        self.extent_y / self.ny as f64
    }
    pub fn pixel_area(&self) -> f64 {
        self.dx() * self.dy()
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// Physical `x` of column `i`.
    pub fn x(&self, i: usize) -> f64 {
        (i as f64 - (self.nx / 2) as f64) * self.dx()
    }
    /// Physical `y` of row `j`.
    pub fn y(&self, j: usize) -> f64 {
        (j as f64 - (self.ny / 2) as f64) * self.dy()
    }
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Output-plane grid of a lens of focal length `focal`: pitch `λf/extent`.
    pub fn fourier(&self, focal: f64) -> GridSpec {
        let lf = self.wavelength * focal;
        GridSpec {
            nx: self.nx,
            ny: self.ny,
            extent_x: lf * self.nx as f64 / self.extent_x,
            extent_y: lf * self.ny as f64 / self.extent_y,
            wavelength: self.wavelength,
        }
    }

    /// Same pitch and wavelength, different pixel counts (zero padding or cropping).
    pub fn resized(&self, nx: usize, ny: usize) -> Result<GridSpec, FieldError> {
        GridSpec::new(nx, ny, self.dx() * nx as f64, self.dy() * ny as f64, self.wavelength)
    }

    /// True when both grids agree to floating-point noise, which absorbs the
    /// rounding left by chains of Fourier-plane rescalings.
    pub fn matches(&self, other: &GridSpec) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        self.nx == other.nx
            && self.ny == other.ny
            && close(self.extent_x, other.extent_x)
            && close(self.extent_y, other.extent_y)
            && close(self.wavelength, other.wavelength)
    }
}

impl Default for GridSpec {
    /// 512 × 512 samples over 10.24 mm at the HeNe wavelength.
    fn default() -> Self {
        GridSpec { nx: 512, ny: 512, extent_x: 10.24e-3, extent_y: 10.24e-3, wavelength: HENE_WAVELENGTH }
    }
}

/// A sampled complex amplitude. Power is `Σ|u|²·dA`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: GridSpec, data: Vec<Complex64>) -> Result<Self, FieldError> {
        if data.len() != grid.len() {
            return Err(FieldError::ShapeMismatch { expected: grid.len(), got: data.len() });
        }
        if let Some(k) = data.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(FieldError::NonFinite(k));
        }
        Ok(Self { grid, data })
    }

    /// Construction for internal pipelines whose arithmetic cannot produce non-finite values.
    pub(crate) fn from_parts(grid: GridSpec, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self { grid, data }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, data: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    /// Samples `f(x, y)` at every pixel centre.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> Complex64) -> Result<Self, FieldError> {
        let mut data = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                data.push(f(grid.x(i), y));
            }
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[self.grid.index(i, j)]
    }

    pub fn power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.pixel_area()
    }

    pub fn normalized(&self) -> Result<Self, FieldError> {
        let p = self.power();
        if !(p > 0.0) {
            return Err(FieldError::ZeroField);
        }
        Ok(self.scaled(Complex64::new(1.0 / p.sqrt(), 0.0)))
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|v| v * c).collect() }
    }

    /// `self + c·other`.
    pub fn add_scaled(&self, c: Complex64, other: &ComplexField) -> Result<Self, FieldError> {
        if !self.grid.matches(&other.grid) {
            return Err(FieldError::GridMismatch);
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + c * b).collect();
        Ok(Self { grid: self.grid, data })
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm_sqr()).collect()
    }

    /// `Σ conj(self)·other·dA`.
    pub fn inner_product(&self, other: &ComplexField) -> Result<Complex64, FieldError> {
        if !self.grid.matches(&other.grid) {
            return Err(FieldError::GridMismatch);
        }
        let s: Complex64 = self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum();
        Ok(s * self.grid.pixel_area())
    }

    pub fn apply_mask(&self, mask: &PhaseMask) -> Result<Self, FieldError> {
        if !self.grid.matches(&mask.grid) {
            return Err(FieldError::GridMismatch);
        }
        let data = self.data.iter().zip(&mask.phase).map(|(v, p)| v * Complex64::cis(*p)).collect();
        Ok(Self { grid: self.grid, data })
    }

    /// Field in the back focal plane of an ideal lens.
    ///
    /// The transform is the unitary centered DFT with output pitch `λf/extent`.
    /// The quadratic phase a real lens leaves in its focal plane is omitted,
    /// so applying the transform twice is an exact coordinate inversion.
    ///
    /// The omitted chirp still fixes the sampling limit: it must be resolved
    /// over the region that holds the field, `|x| ≤ λf/(2dx)`. Support is
    /// measured as the smallest centred window leaving ≤ 1e−10 of the power
    /// outside.
    pub fn lens_fourier(&self, focal: f64) -> Result<Self, FieldError> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(FieldError::InvalidFocalLength(focal));
        }
        let g = &self.grid;
        let lf = g.wavelength * focal;
        let (sx, sy) = self.support_half_widths(1e-10);
        for (axis, support, pitch) in [('x', sx, g.dx()), ('y', sy, g.dy())] {
            let limit = lf / (2.0 * pitch);
            if support > limit * (1.0 + 1e-12) {
                let min_focal = 2.0 * support * pitch / g.wavelength;
                return Err(FieldError::Aliasing { axis, support, limit, min_focal });
            }
        }
        Ok(self.fourier_unchecked(focal))
    }

    pub(crate) fn fourier_unchecked(&self, focal: f64) -> Self {
        let g = self.grid;
        let out = g.fourier(focal);
        let mut data = self.data.clone();
        fft::fft2_centered(&mut data, g.nx, g.ny);
        let s = (g.pixel_area() / out.pixel_area()).sqrt();
        for v in &mut data {
            *v *= s;
        }
        Self { grid: out, data }
    }

    /// Half-widths (m) of the smallest centred window containing all but
    /// `tail` of the power, per axis.
    pub fn support_half_widths(&self, tail: f64) -> (f64, f64) {
        let g = &self.grid;
        let mut px = vec![0.0; g.nx];
        let mut py = vec![0.0; g.ny];
        for j in 0..g.ny {
            for i in 0..g.nx {
                let p = self.data[g.index(i, j)].norm_sqr();
                px[i] += p;
                py[j] += p;
            }
        }
        (half_width(&px, g.dx(), tail), half_width(&py, g.dy(), tail))
    }

    /// Coordinate inversion `(x, y) → (−x, −y)` on the centred lattice.
    pub fn inverted(&self) -> Self {
        let g = self.grid;
        let mut data = vec![Complex64::new(0.0, 0.0); g.len()];
        for j in 0..g.ny {
            for i in 0..g.nx {
                data[g.index(i, j)] = self.data[g.index((g.nx - i) % g.nx, (g.ny - j) % g.ny)];
            }
        }
        Self { grid: g, data }
    }

    /// Total phase accumulated on a closed circle of radius `r` (radians),
    /// sampled with `steps` nearest-pixel lookups.
    pub fn winding_phase(&self, r: f64, steps: usize) -> f64 {
        let g = &self.grid;
        let sample = |t: f64| {
            let i = ((r * t.cos()) / g.dx()).round() as i64 + (g.nx / 2) as i64;
            let j = ((r * t.sin()) / g.dy()).round() as i64 + (g.ny / 2) as i64;
            self.at(i.clamp(0, g.nx as i64 - 1) as usize, j.clamp(0, g.ny as i64 - 1) as usize)
        };
        let mut total = 0.0;
        let mut prev = sample(0.0);
        for s in 1..=steps {
            let cur = sample(2.0 * PI * s as f64 / steps as f64);
            total += (cur * prev.conj()).arg();
            prev = cur;
        }
        total
    }
}

fn half_width(marginal: &[f64], pitch: f64, tail: f64) -> f64 {
    let total: f64 = marginal.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let n = marginal.len();
    let c = n / 2;
    // Grow the window symmetrically about the centre sample until the outside
    // power drops below the tail fraction.
    let mut inside = marginal[c];
    let mut k = 0;
    while total - inside > tail * total && k < c {
        k += 1;
        inside += marginal[c - k];
        if c + k < n {
            inside += marginal[c + k];
        }
    }
    k as f64 * pitch
}

/// Phase-only element sampled on a grid (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMask {
    grid: GridSpec,
    phase: Vec<f64>,
}

impl PhaseMask {
    pub fn new(grid: GridSpec, phase: Vec<f64>) -> Result<Self, FieldError> {
        if phase.len() != grid.len() {
            return Err(FieldError::ShapeMismatch { expected: grid.len(), got: phase.len() });
        }
        if let Some(k) = phase.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(k));
        }
        Ok(Self { grid, phase })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, phase: vec![0.0; grid.len()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self, FieldError> {
        let mut phase = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                phase.push(f(grid.x(i), y));
            }
        }
        Self::new(grid, phase)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn phase(&self) -> &[f64] {
        &self.phase
    }
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.phase[self.grid.index(i, j)]
    }

    pub fn negated(&self) -> Self {
        Self { grid: self.grid, phase: self.phase.iter().map(|p| -p).collect() }
    }
}

/// `Σ conj(f)·g·dA`.
pub fn inner_product(f: &ComplexField, g: &ComplexField) -> Result<Complex64, FieldError> {
    f.inner_product(g)
}

pub fn lens_fourier(f: &ComplexField, focal: f64) -> Result<ComplexField, FieldError> {
    f.lens_fourier(focal)
}

pub fn apply_mask(f: &ComplexField, m: &PhaseMask) -> Result<ComplexField, FieldError> {
    f.apply_mask(m)
}

pub fn power(f: &ComplexField) -> f64 {
    f.power()
}

pub fn normalize(f: &ComplexField) -> Result<ComplexField, FieldError> {
    f.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(grid: GridSpec, w0: f64) -> ComplexField {
        ComplexField::from_fn(grid, |x, y| Complex64::new((-(x * x + y * y) / (w0 * w0)).exp(), 0.0))
            .unwrap()
            .normalized()
            .unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(31, 32, 1.0, 1.0, 1e-6).is_err());
        assert!(GridSpec::new(16, 32, 1.0, 1.0, 1e-6).is_err());
        assert!(GridSpec::new(32, 32, 0.0, 1.0, 1e-6).is_err());
        assert!(GridSpec::new(32, 32, 1.0, 1.0, f64::NAN).is_err());
        let g = GridSpec::default();
        assert_eq!(g.x(256), 0.0);
        assert!((g.dx() - 20e-6).abs() < 1e-18);
    }

    #[test]
    fn grid_serde_rejects_unknown_and_invalid() {
        let ok: GridSpec = serde_json::from_str(
            r#"{"nx":64,"ny":64,"extent_x":0.01,"extent_y":0.01,"wavelength":6e-7}"#,
        )
        .unwrap();
        assert_eq!(ok.nx(), 64);
        assert!(serde_json::from_str::<GridSpec>(
            r#"{"nx":64,"ny":64,"extent_x":0.01,"extent_y":0.01,"wavelength":6e-7,"dx":1}"#
        )
        .is_err());
        assert!(serde_json::from_str::<GridSpec>(
            r#"{"nx":63,"ny":64,"extent_x":0.01,"extent_y":0.01,"wavelength":6e-7}"#
        )
        .is_err());
    }

    #[test]
    fn zero_field_power_and_normalize() {
        let z = ComplexField::zeros(GridSpec::default());
        assert_eq!(z.power(), 0.0);
        assert_eq!(z.normalized(), Err(FieldError::ZeroField));
    }

    #[test]
    fn rejects_non_finite() {
        let g = GridSpec::square(32, 1e-3, 1e-6).unwrap();
        let mut d = vec![Complex64::new(0.0, 0.0); g.len()];
        d[7] = Complex64::new(f64::INFINITY, 0.0);
        assert_eq!(ComplexField::new(g, d), Err(FieldError::NonFinite(7)));
    }

    #[test]
    fn gaussian_waist_maps_to_far_field_waist() {
        let g = GridSpec::default();
        let w0 = 1.0e-3;
        let f = 0.25;
        let out = gaussian(g, w0).lens_fourier(f).unwrap();
        let w_expected = g.wavelength() * f / (PI * w0);
        // Second moment of |u|² along x equals w²/4 for a Gaussian of waist w.
        let og = *out.grid();
        let (mut m2, mut p) = (0.0, 0.0);
        for j in 0..og.ny() {
            for i in 0..og.nx() {
                let v = out.at(i, j).norm_sqr();
                m2 += v * og.x(i).powi(2);
                p += v;
            }
        }
        let w = 2.0 * (m2 / p).sqrt();
        assert!((w - w_expected).abs() / w_expected < 1e-3, "{w} vs {w_expected}");
    }

    #[test]
    fn lens_rejects_bad_focal_and_aliasing() {
        let g = GridSpec::default();
        let f = gaussian(g, 1e-3);
        assert_eq!(f.lens_fourier(0.0), Err(FieldError::InvalidFocalLength(0.0)));
        match f.lens_fourier(0.05) {
            Err(FieldError::Aliasing { axis, min_focal, .. }) => {
                assert_eq!(axis, 'x');
                assert!(min_focal > 0.05);
                assert!(f.lens_fourier(min_focal * 1.001).is_ok());
            }
            other => panic!("expected aliasing error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_grids_error() {
        let a = ComplexField::zeros(GridSpec::default());
        let b = ComplexField::zeros(GridSpec::square(64, 1e-3, 1e-6).unwrap());
        assert_eq!(a.inner_product(&b), Err(FieldError::GridMismatch));
        assert_eq!(a.apply_mask(&PhaseMask::zeros(*b.grid())), Err(FieldError::GridMismatch));
    }

    #[test]
    fn support_of_centred_disk() {
        let g = GridSpec::square(128, 1.28e-3, 1e-6).unwrap();
        let f = ComplexField::from_fn(g, |x, y| {
            Complex64::new(if x.hypot(y) <= 0.3e-3 { 1.0 } else { 0.0 }, 0.0)
        })
        .unwrap();
        let (sx, sy) = f.support_half_widths(1e-10);
        assert!((sx - 0.3e-3).abs() < 1.5e-5 && (sy - 0.3e-3).abs() < 1.5e-5);
    }
}
