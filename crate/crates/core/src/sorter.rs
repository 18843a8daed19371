//! Log-polar OAM/ANG mode sorter with optional fan-out enhancement.
//!
//! Coordinates: the unwrapper maps azimuth onto the `y` axis of the
//! transform plane, so an OAM mode becomes a strip of width `2πa` along `y`
//! with phase `exp(iℓy/a)`. Every later element acts along `y` only, detector
//! bins are strips stacked along `y`, and all post-transform planes may be
//! zero-padded along `y` to sample the detector finely.
//!
//! The quadratic lens terms printed in both element profiles cancel the
//! Fresnel chirps of the f1 propagation, so the pipeline applies their
//! non-quadratic parts around an exact Fourier transform. [`unwrapper_mask`]
//! and [`corrector_mask`] still return the complete profiles.

use crate::fft::CenteredFft;
use crate::field::{ComplexField, FieldError, GridSpec, PhaseMask};
use crate::modes::{self, ModeError, VortexBasis};
use crate::qkd;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SorterError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Mode(#[from] ModeError),
    #[error("invalid sorter configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported copy count {0}: expected 1, 3 or 9")]
    UnsupportedCopies(usize),
    #[error("detector bins reach {reach:.4e} m but the detector plane ends at {limit:.4e} m")]
    BinsExceedGrid { reach: f64, limit: f64 },
    #[error("malformed crosstalk table: {0}")]
    Parse(String),
}

/// Which mode family the sorter is arranged to resolve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortBasis {
    /// OAM modes focus to spots; the fan-out sits in the spot plane.
    Oam,
    /// ANG modes are read in an image of the transform plane; the corrector
    /// plane is relayed onto the fan-out.
    Ang,
}

// ---------------------------------------------------------------------------
// Fan-out
// ---------------------------------------------------------------------------

// Phase-only fan-out designs with amplitude weights chosen so that the
// diffraction orders are equal (orders m = −(N−1)/2..=(N−1)/2).
const PHASES_3: [f64; 3] = [1.2941576004584159, 1.9006000944627037, 5.648619701619136];
const LOG_WEIGHTS_3: [f64; 3] = [0.09285686946338852, -0.18575903467101357, 0.09285654538296641];
const PHASES_9: [f64; 9] = [
    5.591621163411316,
    2.9528295282981323,
    7.502811465481092,
    4.672318681195449,
    -0.31440077699059205,
    2.421749428023235,
    3.001649159179838,
    2.4843106882956056,
    2.8724944877111835,
];
const LOG_WEIGHTS_9: [f64; 9] = [
    0.03139139923512599,
    -0.054734624424070594,
    -0.033560342776194095,
    -0.025814083034395894,
    0.003331907468337688,
    -0.025822165280179006,
    -0.03355001838981227,
    -0.05473150146562858,
    0.03138634725882881,
];

/// Amplitudes and phases of a fan-out design, without geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanoutParams {
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl FanoutParams {
    /// Built-in design for 1, 3 or 9 copies.
    pub fn designed(copies: usize) -> Result<Self, SorterError> {
        let (phases, logw): (&[f64], &[f64]) = match copies {
            1 => (&[0.0], &[0.0]),
            3 => (&PHASES_3, &LOG_WEIGHTS_3),
            9 => (&PHASES_9, &LOG_WEIGHTS_9),
            n => return Err(SorterError::UnsupportedCopies(n)),
        };
        let w: Vec<f64> = logw.iter().map(|v| v.exp()).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { amplitudes: w.iter().map(|v| v / norm).collect(), phases: phases.to_vec() })
    }
}

/// Fan-out field `U(y) = Σ_m A_m e^{iφ_m} e^{−i2π s_m y/λ}` realized as the
/// phase-only grating `arg U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanoutSpec {
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    angles: Vec<f64>,
}

impl FanoutSpec {
    /// Angles must be equally spaced so that the grating is periodic.
    pub fn new(amplitudes: Vec<f64>, phases: Vec<f64>, angles: Vec<f64>) -> Result<Self, SorterError> {
        let n = amplitudes.len();
        if !matches!(n, 1 | 3 | 9) {
            return Err(SorterError::UnsupportedCopies(n));
        }
        if phases.len() != n || angles.len() != n {
            return Err(SorterError::InvalidConfig("fan-out amplitudes, phases and angles differ in length".into()));
        }
        if amplitudes.iter().chain(&phases).chain(&angles).any(|v| !v.is_finite()) {
            return Err(SorterError::InvalidConfig("fan-out parameters must be finite".into()));
        }
        let total: f64 = amplitudes.iter().map(|a| a * a).sum();
        if total > 1.0 + 1e-12 || amplitudes.iter().any(|a| *a < 0.0) {
            return Err(SorterError::InvalidConfig(format!("fan-out amplitudes need Σ|A|² ≤ 1, got {total}")));
        }
        if n > 1 {
            let step = angles[1] - angles[0];
            if step == 0.0 || angles.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs()) {
                return Err(SorterError::InvalidConfig("fan-out angles must be equally spaced".into()));
            }
        }
        Ok(Self { amplitudes, phases, angles })
    }

    /// Design `params` with copy `m` leaving at angle `−m·angle_step`.
    pub fn from_params(params: &FanoutParams, angle_step: f64) -> Result<Self, SorterError> {
        let n = params.amplitudes.len() as i64;
        let angles = (0..n).map(|k| -((k - (n - 1) / 2) as f64) * angle_step).collect();
        Self::new(params.amplitudes.clone(), params.phases.clone(), angles)
    }

    pub fn designed(copies: usize, angle_step: f64) -> Result<Self, SorterError> {
        Self::from_params(&FanoutParams::designed(copies)?, angle_step)
    }

    pub fn copies(&self) -> usize {
        self.amplitudes.len()
    }
    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }
    pub fn phases(&self) -> &[f64] {
        &self.phases
    }
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    fn angle_step(&self) -> f64 {
        if self.copies() == 1 {
            0.0
        } else {
            self.angles[1] - self.angles[0]
        }
    }

    /// Grating period `λ/|Δs|`; infinite for a single copy.
    pub fn period(&self, wavelength: f64) -> f64 {
        wavelength / self.angle_step().abs()
    }

    /// Grating phase at transverse position `y`.
    pub fn grating_phase(&self, y: f64, wavelength: f64) -> f64 {
        if self.copies() == 1 {
            return 0.0;
        }
        let u: Complex64 = (0..self.copies())
            .map(|k| {
                Complex64::from_polar(self.amplitudes[k], self.phases[k] - 2.0 * PI * self.angles[k] * y / wavelength)
            })
            .sum();
        u.arg()
    }

    /// Complex amplitudes of the copies actually produced by the phase-only
    /// grating (its Fourier coefficients at the design angles).
    pub fn order_coefficients(&self) -> Vec<Complex64> {
        if self.copies() == 1 {
            return vec![Complex64::new(1.0, 0.0)];
        }
        const M: usize = 4096;
        let lambda = 1.0;
        let period = self.period(lambda);
        let samples: Vec<Complex64> =
            (0..M).map(|k| Complex64::cis(self.grating_phase(k as f64 * period / M as f64, lambda))).collect();
        self.angles
            .iter()
            .map(|s| {
                samples
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * Complex64::cis(2.0 * PI * s * (k as f64 * period / M as f64) / lambda))
                    .sum::<Complex64>()
                    / M as f64
            })
            .collect()
    }

    /// Fraction of incident power carried by the designed copies.
    pub fn efficiency(&self) -> f64 {
        self.order_coefficients().iter().map(|c| c.norm_sqr()).sum()
    }

    /// Ratio of the strongest to the weakest copy.
    pub fn uniformity(&self) -> f64 {
        let p: Vec<f64> = self.order_coefficients().iter().map(|c| c.norm_sqr()).collect();
        p.iter().cloned().fold(f64::MIN, f64::max) / p.iter().cloned().fold(f64::MAX, f64::min)
    }

    /// Corrector phase at position `u` in the Fourier plane (focal length
    /// `focal`) of the grating: each copy's region `|u − u_m| ≤ Δ/2` receives
    /// `−arg c_m`, where `u_m = −s_m·focal`.
    pub fn corrector_phase(&self, u: f64, focal: f64, coeffs: &[Complex64]) -> f64 {
        if self.copies() == 1 {
            return 0.0;
        }
        let spacing = (self.angle_step() * focal).abs();
        for (s, c) in self.angles.iter().zip(coeffs) {
            if (u + s * focal).abs() <= spacing / 2.0 {
                return -c.arg();
            }
        }
        0.0
    }
}

/// Fan-out grating on `grid` and its phase corrector on the Fourier plane of
/// `grid` at `focal`. Both vary along `y` only.
pub fn fanout_masks(spec: &FanoutSpec, grid: &GridSpec, focal: f64) -> Result<(PhaseMask, PhaseMask), SorterError> {
    if !matches!(spec.copies(), 1 | 3 | 9) {
        return Err(SorterError::UnsupportedCopies(spec.copies()));
    }
    let lambda = grid.wavelength();
    if spec.copies() > 1 && spec.period(lambda) < 4.0 * grid.dy() {
        return Err(SorterError::InvalidConfig(format!(
            "fan-out period {:.3e} m is under 4 pixels of the grating plane",
            spec.period(lambda)
        )));
    }
    let coeffs = spec.order_coefficients();
    let grating = PhaseMask::from_fn(*grid, |_, y| spec.grating_phase(y, lambda))?;
    let corrector = PhaseMask::from_fn(grid.fourier(focal), |_, u| spec.corrector_phase(u, focal, &coeffs))?;
    Ok((grating, corrector))
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Sorter geometry and options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SorterConfig {
    /// Input-plane sampling grid.
    pub grid: GridSpec,
    /// Mapping scale (m); the transformed strip is `2πa` wide.
    pub a: f64,
    /// Radial scale (m).
    pub b: f64,
    /// Transform focal length (m).
    pub f1: f64,
    /// Focal length of every later lens (m).
    pub f2: f64,
    /// Radius of the vortex aperture used for test modes (m).
    pub aperture: f64,
    pub copies: usize,
    /// Custom fan-out design; `None` uses the built-in one for `copies`.
    #[serde(default)]
    pub fanout: Option<FanoutParams>,
    pub basis: SortBasis,
    /// Number of ANG modes the ANG arrangement separates.
    pub ang_modes: usize,
    /// Apply the phase-correcting element; off only for A/B comparisons.
    #[serde(default = "default_true")]
    pub corrector: bool,
    /// Samples along `y` in the post-transform planes; `None` picks a size
    /// giving ≥ 8 samples per detector bin.
    #[serde(default)]
    pub rows: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl SorterConfig {
    /// Geometry scaled to `grid`: the strip fills 80% of the transform plane,
    /// the aperture fills 88% of the input plane, and `b = R·e^{−3/2}`.
    pub fn for_grid(grid: GridSpec, copies: usize, basis: SortBasis) -> Self {
        let f1 = 0.25;
        let transform_extent = grid.wavelength() * f1 * grid.ny() as f64 / grid.extent_y();
        let aperture = 0.44 * grid.extent_x().min(grid.extent_y());
        Self {
            grid,
            a: 0.8 * transform_extent / (2.0 * PI),
            b: aperture * (-1.5f64).exp(),
            f1,
            f2: 0.25,
            aperture,
            copies,
            fanout: None,
            basis,
            ang_modes: 25,
            corrector: true,
            rows: None,
        }
    }

    pub fn with_copies(mut self, copies: usize) -> Self {
        self.copies = copies;
        self
    }

    pub fn with_basis(mut self, basis: SortBasis) -> Self {
        self.basis = basis;
        self
    }

    pub fn validate(&self) -> Result<(), SorterError> {
        for (name, v) in [("a", self.a), ("b", self.b), ("f1", self.f1), ("f2", self.f2), ("aperture", self.aperture)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SorterError::InvalidConfig(format!("{name} = {v} must be finite and positive")));
            }
        }
        if !matches!(self.copies, 1 | 3 | 9) {
            return Err(SorterError::UnsupportedCopies(self.copies));
        }
        let p1 = self.transform_grid();
        if self.strip_width() > p1.extent_y() {
            return Err(SorterError::InvalidConfig(format!(
                "strip width 2πa = {:.4e} m exceeds the transform plane ({:.4e} m)",
                self.strip_width(),
                p1.extent_y()
            )));
        }
        let chirp_limit = self.grid.wavelength() * self.f1 / (2.0 * self.grid.dx().max(self.grid.dy()));
        if self.aperture > chirp_limit {
            return Err(SorterError::InvalidConfig(format!(
                "aperture {:.4e} m exceeds the f1 lens sampling limit {chirp_limit:.4e} m",
                self.aperture
            )));
        }
        if self.basis == SortBasis::Ang && self.ang_modes < 2 {
            return Err(SorterError::InvalidConfig("ang_modes must be at least 2".into()));
        }
        if let Some(p) = &self.fanout {
            if p.amplitudes.len() != self.copies {
                return Err(SorterError::InvalidConfig(format!(
                    "fan-out design has {} copies but copies = {}",
                    p.amplitudes.len(),
                    self.copies
                )));
            }
        }
        let rows = self.rows();
        if rows < self.grid.ny() || rows % 2 != 0 {
            return Err(SorterError::InvalidConfig(format!("rows = {rows} must be even and ≥ ny")));
        }
        GridSpec::new(self.grid.nx(), rows, 1.0, 1.0, 1.0)?;
        Ok(())
    }

    pub fn strip_width(&self) -> f64 {
        2.0 * PI * self.a
    }

    /// Grid of the transform plane (after the f1 lens).
    pub fn transform_grid(&self) -> GridSpec {
        self.grid.fourier(self.f1)
    }

    /// Detector-bin pitch `λ·f2/(2πa)` of the OAM arrangement.
    pub fn spot_pitch(&self) -> f64 {
        self.grid.wavelength() * self.f2 / self.strip_width()
    }

    /// Sort-axis length of the post-transform planes.
    pub fn rows(&self) -> usize {
        if let Some(r) = self.rows {
            return r;
        }
        let ny = self.grid.ny();
        match self.basis {
            SortBasis::Ang => ny,
            SortBasis::Oam => {
                let strip_px = self.strip_width() / self.transform_grid().dy();
                let need = (8.0 * strip_px).max(1.15 * self.copies as f64 * strip_px).max(ny as f64);
                (need.ceil() as usize).next_power_of_two()
            }
        }
    }

    /// Fan-out spec with angles set by the geometry of the chosen basis.
    pub fn fanout_spec(&self) -> Result<FanoutSpec, SorterError> {
        let params = match &self.fanout {
            Some(p) => p.clone(),
            None => FanoutParams::designed(self.copies)?,
        };
        let lambda = self.grid.wavelength();
        // OAM: grating period = spot pitch, copies shifted by one strip width.
        // ANG: grating period = segment pitch, copies shifted by `ang_modes` spots.
        let period = match self.basis {
            SortBasis::Oam => self.spot_pitch(),
            SortBasis::Ang => self.strip_width() / self.ang_modes as f64,
        };
        FanoutSpec::from_params(&params, lambda / period)
    }
}

impl Default for SorterConfig {
    /// 1024² grid over 10.24 mm, nine copies, OAM arrangement.
    fn default() -> Self {
        let grid = GridSpec::square(1024, 10.24e-3, crate::field::HENE_WAVELENGTH).expect("static grid");
        Self::for_grid(grid, 9, SortBasis::Oam)
    }
}

// ---------------------------------------------------------------------------
// Elements
// ---------------------------------------------------------------------------

fn unwrapper_phase(cfg: &SorterConfig, x: f64, y: f64, with_lens: bool) -> f64 {
    let (x, y) = if x == 0.0 && y == 0.0 { (cfg.grid.dx(), 0.0) } else { (x, y) };
    let r = x.hypot(y);
    let mut s = y * y.atan2(x) - x * (r / cfg.b).ln() + x;
    if with_lens {
        s -= (x * x + y * y) / (2.0 * cfg.a);
    }
    2.0 * PI * cfg.a / (cfg.grid.wavelength() * cfg.f1) * s
}

fn corrector_phase(cfg: &SorterConfig, u: f64, v: f64, with_lens: bool) -> f64 {
    let lf = cfg.grid.wavelength() * cfg.f1;
    let mut p = -2.0 * PI * cfg.a * cfg.b / lf * (-u / cfg.a).exp() * (v / cfg.a).cos();
    if with_lens {
        p -= PI * (u * u + v * v) / lf;
    }
    p
}

/// Unwrapping element `φ1 = (2πa/λf1)[y·atan2(y,x) − x·ln(r/b) + x − r²/(2a)]`
/// on the input grid. The origin pixel takes the value of its `+x` neighbour.
pub fn unwrapper_mask(cfg: &SorterConfig) -> Result<PhaseMask, SorterError> {
    cfg.validate()?;
    Ok(PhaseMask::from_fn(cfg.grid, |x, y| unwrapper_phase(cfg, x, y, true))?)
}

/// Phase-correcting element `φ2 = −(2πab/λf1)·e^{−u/a}cos(v/a) − π(u²+v²)/(λf1)`
/// on the transform grid.
pub fn corrector_mask(cfg: &SorterConfig) -> Result<PhaseMask, SorterError> {
    cfg.validate()?;
    Ok(PhaseMask::from_fn(cfg.transform_grid(), |u, v| corrector_phase(cfg, u, v, true))?)
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

enum Stage {
    Fourier,
    Phase(Vec<Complex64>),
}

/// Sort-axis operations after the transform plane plus the detector binning.
struct Chain {
    rows: usize,
    stages: Vec<Stage>,
    /// `y` pitch of the plane after each stage, starting with the padded transform plane.
    pitches: Vec<f64>,
}

impl Chain {
    fn new(cfg: &SorterConfig) -> Result<Self, SorterError> {
        let rows = cfg.rows();
        let lambda = cfg.grid.wavelength();
        let image_pitch = cfg.transform_grid().dy();
        let fourier_pitch = lambda * cfg.f2 / (rows as f64 * image_pitch);
        let coord = |k: usize, pitch: f64| (k as f64 - (rows / 2) as f64) * pitch;
        let mut stages = vec![Stage::Fourier];
        let mut pitches = vec![image_pitch, fourier_pitch];
        if cfg.basis == SortBasis::Ang {
            stages.push(Stage::Fourier);
            pitches.push(image_pitch);
        }
        if cfg.copies > 1 {
            let spec = cfg.fanout_spec()?;
            let grating_pitch = *pitches.last().unwrap();
            let corr_pitch = if grating_pitch == image_pitch { fourier_pitch } else { image_pitch };
            if spec.period(lambda) < 4.0 * grating_pitch {
                return Err(SorterError::InvalidConfig(format!(
                    "fan-out period {:.3e} m is under 4 samples; increase rows",
                    spec.period(lambda)
                )));
            }
            let coeffs = spec.order_coefficients();
            let grating = (0..rows).map(|k| Complex64::cis(spec.grating_phase(coord(k, grating_pitch), lambda))).collect();
            let corr =
                (0..rows).map(|k| Complex64::cis(spec.corrector_phase(coord(k, corr_pitch), cfg.f2, &coeffs))).collect();
            let reach = (cfg.copies as f64 / 2.0) * (spec.angle_step() * cfg.f2).abs();
            let limit = rows as f64 * corr_pitch / 2.0;
            if reach > limit {
                return Err(SorterError::InvalidConfig(format!(
                    "fan-out copies reach {reach:.4e} m beyond the plane half-width {limit:.4e} m; increase rows"
                )));
            }
            stages.extend([Stage::Phase(grating), Stage::Fourier, Stage::Phase(corr), Stage::Fourier]);
            pitches.extend([corr_pitch, grating_pitch]);
        }
        Ok(Self { rows, stages, pitches })
    }

    fn detector_pitch(&self) -> f64 {
        *self.pitches.last().unwrap()
    }

    /// Runs every column of `lines` (each `rows` long, contiguous) through the chain.
    fn run(&self, lines: &mut [Complex64], fft: &CenteredFft) {
        for stage in &self.stages {
            match stage {
                Stage::Fourier => fft.process(lines),
                Stage::Phase(p) => {
                    for line in lines.chunks_exact_mut(self.rows) {
                        for (v, m) in line.iter_mut().zip(p) {
                            *v *= m;
                        }
                    }
                }
            }
        }
    }
}

fn check_input(field: &ComplexField, cfg: &SorterConfig) -> Result<(), SorterError> {
    cfg.validate()?;
    if !field.grid().matches(&cfg.grid) {
        return Err(FieldError::GridMismatch.into());
    }
    Ok(())
}

/// Field in the transform plane after the unwrapper, the f1 lens and the corrector.
pub fn transform_plane(field: &ComplexField, cfg: &SorterConfig) -> Result<ComplexField, SorterError> {
    check_input(field, cfg)?;
    let g = cfg.grid;
    let mut data = field.data().to_vec();
    for j in 0..g.ny() {
        let y = g.y(j);
        for i in 0..g.nx() {
            data[g.index(i, j)] *= Complex64::cis(unwrapper_phase(cfg, g.x(i), y, false));
        }
    }
    let mut p1 = ComplexField::from_parts(g, data).fourier_unchecked(cfg.f1);
    if cfg.corrector {
        let t = *p1.grid();
        let mut d = p1.into_data();
        for j in 0..t.ny() {
            let v = t.y(j);
            for i in 0..t.nx() {
                d[t.index(i, j)] *= Complex64::cis(corrector_phase(cfg, t.x(i), v, false));
            }
        }
        p1 = ComplexField::from_parts(t, d);
    }
    Ok(p1)
}

/// Detector-plane field of the complete sorter.
///
/// OAM: transform plane → f2 lens → [grating → f2 → corrector → f2].
/// ANG: transform plane → two f2 lenses (image relay) → [grating → f2 →
/// corrector → f2]. The output grid has `cfg.rows()` samples along `y`.
pub fn sort(field: &ComplexField, cfg: &SorterConfig) -> Result<ComplexField, SorterError> {
    let p1 = transform_plane(field, cfg)?;
    let chain = Chain::new(cfg)?;
    let t = *p1.grid();
    let rows = chain.rows;
    let offset = (rows - t.ny()) / 2;
    let mut padded = vec![Complex64::new(0.0, 0.0); t.nx() * rows];
    padded[offset * t.nx()..(offset + t.ny()) * t.nx()].copy_from_slice(p1.data());
    let mut cur = ComplexField::from_parts(t.resized(t.nx(), rows)?, padded);
    for stage in &chain.stages {
        cur = match stage {
            Stage::Fourier => cur.fourier_unchecked(cfg.f2),
            Stage::Phase(p) => {
                let g = *cur.grid();
                let mut d = cur.into_data();
                for (j, row) in d.chunks_exact_mut(g.nx()).enumerate() {
                    for v in row {
                        *v *= p[j];
                    }
                }
                ComplexField::from_parts(g, d)
            }
        };
    }
    Ok(cur)
}

/// Detector intensity summed across `x`, with the sample pitch along `y`.
///
/// Equivalent to summing `|sort(field)|²` over columns: every stage after the
/// transform plane acts along `y`, and the `x` transforms it skips are unitary.
pub fn detector_profile(field: &ComplexField, cfg: &SorterConfig) -> Result<(Vec<f64>, f64), SorterError> {
    let p1 = transform_plane(field, cfg)?;
    let chain = Chain::new(cfg)?;
    Ok((profile_from_transform_plane(&p1, &chain), chain.detector_pitch()))
}

fn profile_from_transform_plane(p1: &ComplexField, chain: &Chain) -> Vec<f64> {
    const BATCH: usize = 64;
    let t = *p1.grid();
    let (nx, ny, rows) = (t.nx(), t.ny(), chain.rows);
    let offset = (rows - ny) / 2;
    let fft = CenteredFft::new(rows);
    let data = p1.data();
    let mut profile = vec![0.0; rows];
    let mut lines = vec![Complex64::new(0.0, 0.0); BATCH * rows];
    for start in (0..nx).step_by(BATCH) {
        let cols = BATCH.min(nx - start);
        let buf = &mut lines[..cols * rows];
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for c in 0..cols {
            let line = &mut buf[c * rows..(c + 1) * rows];
            for j in 0..ny {
                line[offset + j] = data[j * nx + start + c];
            }
        }
        chain.run(buf, &fft);
        for line in buf.chunks_exact(rows) {
            for (p, v) in profile.iter_mut().zip(line) {
                *p += v.norm_sqr();
            }
        }
    }
    profile
}

/// Power in `[centre − width/2, centre + width/2]` of a sampled profile, with
/// fractional weighting of partially covered samples.
pub fn bin_power(profile: &[f64], pitch: f64, centre: f64, width: f64) -> f64 {
    let half = (profile.len() / 2) as f64;
    let (lo, hi) = (centre - width / 2.0, centre + width / 2.0);
    let k0 = ((lo / pitch + half - 1.0).floor().max(0.0)) as usize;
    let k1 = ((hi / pitch + half + 1.0).ceil() as usize).min(profile.len());
    (k0..k1)
        .map(|k| {
            let y = (k as f64 - half) * pitch;
            let overlap = (hi.min(y + pitch / 2.0) - lo.max(y - pitch / 2.0)).max(0.0);
            profile[k] * overlap / pitch
        })
        .sum()
}

/// Intensity centroid inside `centre ± half_window`.
pub fn centroid(profile: &[f64], pitch: f64, centre: f64, half_window: f64) -> f64 {
    let half = (profile.len() / 2) as f64;
    let (mut m, mut p) = (0.0, 0.0);
    for (k, v) in profile.iter().enumerate() {
        let y = (k as f64 - half) * pitch;
        if (y - centre).abs() <= half_window {
            m += v * y;
            p += v;
        }
    }
    m / p
}

// ---------------------------------------------------------------------------
// Crosstalk
// ---------------------------------------------------------------------------

/// Conditional detection probabilities `P(bin | sent)`; the last column is loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkMatrix {
    send_labels: Vec<i32>,
    bin_labels: Vec<i32>,
    rows: Vec<Vec<f64>>,
}

impl CrosstalkMatrix {
    /// `rows[i]` holds one probability per bin followed by the loss probability.
    pub fn new(send_labels: Vec<i32>, bin_labels: Vec<i32>, rows: Vec<Vec<f64>>) -> Result<Self, SorterError> {
        if rows.len() != send_labels.len() {
            return Err(SorterError::Parse(format!("{} rows for {} labels", rows.len(), send_labels.len())));
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != bin_labels.len() + 1 {
                return Err(SorterError::Parse(format!("row {i} has {} entries, expected {}", r.len(), bin_labels.len() + 1)));
            }
            if r.iter().any(|p| !(p.is_finite() && *p >= 0.0 && *p <= 1.0 + 1e-12)) {
                return Err(SorterError::Parse(format!("row {i} has entries outside [0, 1]")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(SorterError::Parse(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { send_labels, bin_labels, rows })
    }

    pub fn send_labels(&self) -> &[i32] {
        &self.send_labels
    }
    pub fn bin_labels(&self) -> &[i32] {
        &self.bin_labels
    }
    /// Rows including the trailing loss entry.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `P(bin | sent)` by label.
    pub fn prob(&self, sent: i32, bin: i32) -> Option<f64> {
        let i = self.send_labels.iter().position(|l| *l == sent)?;
        let j = self.bin_labels.iter().position(|l| *l == bin)?;
        Some(self.rows[i][j])
    }

    pub fn loss(&self, sent: i32) -> Option<f64> {
        let i = self.send_labels.iter().position(|l| *l == sent)?;
        self.rows[i].last().copied()
    }

    /// `P(ℓ−1|ℓ) + P(ℓ+1|ℓ)` for interior labels; bins that do not exist count as zero.
    pub fn neighbor_crosstalk(&self, sent: i32) -> Option<f64> {
        self.prob(sent, sent)?;
        Some(self.prob(sent, sent - 1).unwrap_or(0.0) + self.prob(sent, sent + 1).unwrap_or(0.0))
    }

    /// Rows renormalized over detector bins only.
    pub fn detected_only(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let n = r.len() - 1;
                let s: f64 = r[..n].iter().sum();
                r[..n].iter().map(|p| p / s).collect()
            })
            .collect()
    }

    /// Mutual information with the loss bin treated as an outcome, uniform prior.
    pub fn mutual_information_raw(&self) -> f64 {
        let prior = vec![1.0 / self.rows.len() as f64; self.rows.len()];
        qkd::mutual_information(&self.rows, &prior).expect("validated matrix")
    }

    /// Mutual information over detected events only, uniform prior.
    pub fn mutual_information_detected(&self) -> f64 {
        let prior = vec![1.0 / self.rows.len() as f64; self.rows.len()];
        qkd::mutual_information(&self.detected_only(), &prior).expect("validated matrix")
    }

    pub fn mean_diagonal(&self) -> f64 {
        let n = self.send_labels.len() as f64;
        self.send_labels.iter().filter_map(|l| self.prob(*l, *l)).sum::<f64>() / n
    }

    /// CSV: header `sent,<bin labels...>,loss`, one row per sent label.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sent");
        for b in &self.bin_labels {
            s.push_str(&format!(",{b}"));
        }
        s.push_str(",loss\n");
        for (l, r) in self.send_labels.iter().zip(&self.rows) {
            s.push_str(&l.to_string());
            for p in r {
                s.push_str(&format!(",{p}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, SorterError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| SorterError::Parse("empty table".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[0] != "sent" || cols[cols.len() - 1] != "loss" {
            return Err(SorterError::Parse("header must read sent,<bins...>,loss".into()));
        }
        let parse_i = |s: &str| s.parse::<i32>().map_err(|e| SorterError::Parse(format!("label {s:?}: {e}")));
        let bins = cols[1..cols.len() - 1].iter().map(|s| parse_i(s)).collect::<Result<Vec<_>, _>>()?;
        let mut sent = Vec::new();
        let mut rows = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            sent.push(parse_i(f[0])?);
            rows.push(
                f[1..]
                    .iter()
                    .map(|s| s.parse::<f64>().map_err(|e| SorterError::Parse(format!("value {s:?}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        Self::new(sent, bins, rows)
    }
}

/// Labels and bin centres (m) on the detector for a band.
fn bins(cfg: &SorterConfig, band: i32) -> (Vec<i32>, Vec<f64>, f64) {
    let d = 2 * band + 1;
    match cfg.basis {
        SortBasis::Oam => {
            let sign = if cfg.copies > 1 { -1.0 } else { 1.0 };
            let labels: Vec<i32> = (-band..=band).collect();
            let centres = labels.iter().map(|l| sign * *l as f64 * cfg.spot_pitch()).collect();
            (labels, centres, cfg.spot_pitch())
        }
        SortBasis::Ang => {
            // Θ_n peaks at θ = −2πn/d; the image relay of the single-copy
            // arrangement inverts the transform plane.
            let sign = if cfg.copies > 1 { 1.0 } else { -1.0 };
            let labels: Vec<i32> = (0..d).collect();
            let centres = labels
                .iter()
                .map(|n| {
                    let theta = (-2.0 * PI * *n as f64 / d as f64 + PI).rem_euclid(2.0 * PI) - PI;
                    sign * cfg.a * theta
                })
                .collect();
            (labels, centres, cfg.strip_width() / d as f64)
        }
    }
}

/// Crosstalk matrix for the OAM band `|ℓ| ≤ band` or the `2·band+1` ANG
/// modes built from it, according to `cfg.basis`.
pub fn crosstalk_matrix(band: i32, cfg: &SorterConfig) -> Result<CrosstalkMatrix, SorterError> {
    cfg.validate()?;
    if band < 1 {
        return Err(SorterError::InvalidConfig("band must be at least 1".into()));
    }
    if cfg.basis == SortBasis::Ang && cfg.ang_modes != (2 * band + 1) as usize {
        return Err(SorterError::InvalidConfig(format!(
            "ANG arrangement is built for {} modes, band {band} has {}",
            cfg.ang_modes,
            2 * band + 1
        )));
    }
    let chain = Chain::new(cfg)?;
    let (labels, centres, width) = bins(cfg, band);
    let pitch = chain.detector_pitch();
    let reach = centres.iter().fold(0.0f64, |m, c| m.max(c.abs())) + width / 2.0;
    let limit = chain.rows as f64 * pitch / 2.0;
    if reach > limit {
        return Err(SorterError::BinsExceedGrid { reach, limit });
    }
    let basis = VortexBasis::get(&cfg.grid, cfg.aperture)?;
    let rows: Vec<Vec<f64>> = labels
        .par_iter()
        .map(|&label| -> Result<Vec<f64>, SorterError> {
            let input = match cfg.basis {
                SortBasis::Oam => basis.mode(label)?,
                SortBasis::Ang => basis.synthesize(&modes::ang_spectrum(label, band)?)?,
            };
            let p1 = transform_plane(&input, cfg)?;
            let profile = profile_from_transform_plane(&p1, &chain);
            let total: f64 = profile.iter().sum();
            let mut row: Vec<f64> = centres.iter().map(|c| bin_power(&profile, pitch, *c, width) / total).collect();
            let detected: f64 = row.iter().sum();
            row.push((1.0 - detected).max(0.0));
            Ok(row)
        })
        .collect::<Result<_, _>>()?;
    CrosstalkMatrix::new(labels.clone(), labels, rows)
}

/// Bin centres and width (m) used by [`crosstalk_matrix`].
pub fn bin_layout(cfg: &SorterConfig, band: i32) -> (Vec<i32>, Vec<f64>, f64) {
    bins(cfg, band)
}

/// Input, transform-plane and detector powers.
pub fn pipeline_powers(field: &ComplexField, cfg: &SorterConfig) -> Result<(f64, f64, f64), SorterError> {
    let p1 = transform_plane(field, cfg)?;
    let det = sort(field, cfg)?;
    Ok((field.power(), p1.power(), det.power()))
}
