//! Ghost-image identification with a multiplexed matched-filter hologram.

use crate::field::{ComplexField, FieldError, GridSpec};
use crate::qkd::pulse_rng;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GhostError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid object set: {0}")]
    InvalidObjects(String),
    #[error("reference tilt {index} has a fringe period under 4 pixels")]
    UnresolvableTilt { index: usize },
    #[error("detector bins {a} and {b} overlap; tilts are too close")]
    BinOverlap { a: usize, b: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Binary masks on a shared grid, each with a reference-beam spatial
/// frequency `(νx, νy)` in cycles per metre.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSet {
    grid: GridSpec,
    masks: Vec<Vec<f64>>,
    tilts: Vec<(f64, f64)>,
}

impl ObjectSet {
    pub fn new(grid: GridSpec, masks: Vec<Vec<f64>>, tilts: Vec<(f64, f64)>) -> Result<Self, GhostError> {
        if masks.is_empty() || masks.len() != tilts.len() {
            return Err(GhostError::InvalidObjects(format!("{} masks and {} tilts", masks.len(), tilts.len())));
        }
        for (k, m) in masks.iter().enumerate() {
            if m.len() != grid.len() {
                return Err(FieldError::ShapeMismatch { expected: grid.len(), got: m.len() }.into());
            }
            if m.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(GhostError::InvalidObjects(format!("mask {k} is not binary")));
            }
        }
        for (k, (nx, ny)) in tilts.iter().enumerate() {
            if !(nx.is_finite() && ny.is_finite()) || nx.abs() * grid.dx() > 0.25 || ny.abs() * grid.dy() > 0.25 {
                return Err(GhostError::UnresolvableTilt { index: k });
            }
            if tilts[..k].iter().any(|t| t == &(*nx, *ny)) {
                return Err(GhostError::InvalidObjects(format!("tilt {k} repeats an earlier tilt")));
            }
        }
        Ok(Self { grid, masks, tilts })
    }

    /// Masks with tilts on the `+x` axis at `k·Δν`, `k = 1..=K`, where
    /// `Δν = 1/(dx·(4K + 2))` keeps every fringe above 4 pixels.
    pub fn with_default_tilts(grid: GridSpec, masks: Vec<Vec<f64>>) -> Result<Self, GhostError> {
        let tilts = default_tilts(&grid, masks.len());
        Self::new(grid, masks, tilts)
    }

    /// Four disjoint shapes, one per quadrant: square, disk, triangle, diamond.
    pub fn four_shapes(grid: GridSpec) -> Result<Self, GhostError> {
        let half = 0.5 * grid.extent_x().min(grid.extent_y());
        let s = 0.45 * half;
        let c = 0.5 * half;
        let centres = [(-c, c), (c, c), (-c, -c), (c, -c)];
        let shapes: [&dyn Fn(f64, f64) -> bool; 4] = [
            &|x, y| x.abs() <= s && y.abs() <= s,
            &|x, y| x.hypot(y) <= s * 1.1,
            &|x, y| y >= -s && y <= s && x.abs() <= 0.55 * (s - y),
            &|x, y| x.abs() + y.abs() <= 1.1 * s,
        ];
        let masks = centres
            .iter()
            .zip(shapes)
            .map(|((cx, cy), f)| shape_mask(&grid, |x, y| f(x - cx, y - cy)))
            .collect();
        Self::with_default_tilts(grid, masks)
    }

    /// The top two shapes of [`ObjectSet::four_shapes`].
    pub fn two_shapes(grid: GridSpec) -> Result<Self, GhostError> {
        let four = Self::four_shapes(grid)?;
        Self::with_default_tilts(grid, four.masks[..2].to_vec())
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn len(&self) -> usize {
        self.masks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
    pub fn mask(&self, k: usize) -> &[f64] {
        &self.masks[k]
    }
    pub fn tilts(&self) -> &[(f64, f64)] {
        &self.tilts
    }

    /// True when no pixel belongs to two masks.
    pub fn is_disjoint(&self) -> bool {
        (0..self.grid.len()).all(|p| self.masks.iter().filter(|m| m[p] != 0.0).count() <= 1)
    }

    pub fn object_field(&self, k: usize) -> ComplexField {
        let data = self.masks[k].iter().map(|v| Complex64::new(*v, 0.0)).collect();
        ComplexField::new(self.grid, data).expect("mask matches grid")
    }
}

fn default_tilts(grid: &GridSpec, k: usize) -> Vec<(f64, f64)> {
    let step = 1.0 / (grid.dx() * (4 * k + 2) as f64);
    (1..=k).map(|i| (i as f64 * step, 0.0)).collect()
}

fn shape_mask(grid: &GridSpec, inside: impl Fn(f64, f64) -> bool) -> Vec<f64> {
    let mut m = vec![0.0; grid.len()];
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            if inside(grid.x(i), grid.y(j)) {
                m[grid.index(i, j)] = 1.0;
            }
        }
    }
    m
}

/// Thin amplitude hologram with transmittance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HologramPlate {
    grid: GridSpec,
    transmittance: Vec<f64>,
    tilts: Vec<(f64, f64)>,
}

impl HologramPlate {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn transmittance(&self) -> &[f64] {
        &self.transmittance
    }
    pub fn tilts(&self) -> &[(f64, f64)] {
        &self.tilts
    }
}

/// `t ∝ Σ_i |O_i + r·R_i|²` with plane-wave references, scaled to peak 1.
///
/// The reference amplitude is `r = 1/√K` for `K` objects, which maximizes
/// the matched-order efficiency `r/(1 + K·r²)` of the plate.
pub fn record_hologram(objects: &ObjectSet) -> Result<HologramPlate, GhostError> {
    record_hologram_with(objects, 1.0 / (objects.len() as f64).sqrt())
}

/// [`record_hologram`] with an explicit reference amplitude.
pub fn record_hologram_with(objects: &ObjectSet, reference: f64) -> Result<HologramPlate, GhostError> {
    if !(reference.is_finite() && reference > 0.0) {
        return Err(GhostError::InvalidParameter(format!("reference amplitude {reference} must be positive")));
    }
    let g = objects.grid;
    let mut intensity = vec![0.0; g.len()];
    for (mask, (nx, ny)) in objects.masks.iter().zip(&objects.tilts) {
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let p = g.index(i, j);
                let r = Complex64::from_polar(reference, 2.0 * std::f64::consts::PI * (nx * g.x(i) + ny * g.y(j)));
                intensity[p] += (mask[p] + r).norm_sqr();
            }
        }
    }
    let peak = intensity.iter().cloned().fold(0.0, f64::max);
    Ok(HologramPlate { grid: g, transmittance: intensity.iter().map(|v| v / peak).collect(), tilts: objects.tilts.clone() })
}

/// Detector layout in the filter's Fourier plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterGeometry {
    pub focal: f64,
    /// Bin radius (m); `None` uses one third of the default order spacing,
    /// so default bins are separated by 1.5 bin diameters.
    #[serde(default)]
    pub bin_radius: Option<f64>,
}

impl Default for FilterGeometry {
    fn default() -> Self {
        Self { focal: 0.25, bin_radius: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderPowers {
    pub zero_order: f64,
    /// One entry per reference tilt.
    pub orders: Vec<f64>,
    /// Total power leaving the plate.
    pub total: f64,
}

fn bin_centres(plate: &HologramPlate, geom: &FilterGeometry) -> Result<(Vec<(f64, f64)>, f64), GhostError> {
    let lf = plate.grid.wavelength() * geom.focal;
    let mut centres = vec![(0.0, 0.0)];
    centres.extend(plate.tilts.iter().map(|(nx, ny)| (lf * nx, lf * ny)));
    let radius = match geom.bin_radius {
        Some(r) => r,
        None => lf * default_tilts(&plate.grid, plate.tilts.len())[0].0 / 3.0,
    };
    for a in 0..centres.len() {
        for b in a + 1..centres.len() {
            let d = (centres[a].0 - centres[b].0).hypot(centres[a].1 - centres[b].1);
            if d < 2.0 * radius {
                return Err(GhostError::BinOverlap { a, b });
            }
        }
    }
    Ok((centres, radius))
}

/// Multiplies `input` by the plate transmittance, takes the lens Fourier
/// transform and integrates power in a disk at the zero order and at each
/// reference tilt's far-field position `λf·ν`.
pub fn filter_response(input: &ComplexField, plate: &HologramPlate, geom: &FilterGeometry) -> Result<OrderPowers, GhostError> {
    if !input.grid().matches(&plate.grid) {
        return Err(FieldError::GridMismatch.into());
    }
    if !(geom.focal.is_finite() && geom.focal > 0.0) {
        return Err(FieldError::InvalidFocalLength(geom.focal).into());
    }
    if let Some(r) = geom.bin_radius {
        if !(r.is_finite() && r > 0.0) {
            return Err(GhostError::InvalidParameter(format!("bin radius {r} must be positive")));
        }
    }
    let (centres, radius) = bin_centres(plate, geom)?;
    let data = input.data().iter().zip(&plate.transmittance).map(|(u, t)| u * t).collect();
    let out = ComplexField::new(plate.grid, data)?.fourier_unchecked(geom.focal);
    let g = *out.grid();
    let da = g.pixel_area();
    let mut bins = vec![0.0; centres.len()];
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let (u, v) = (g.x(i), g.y(j));
            for (b, c) in bins.iter_mut().zip(&centres) {
                if (u - c.0).hypot(v - c.1) <= radius {
                    *b += out.data()[g.index(i, j)].norm_sqr() * da;
                }
            }
        }
    }
    Ok(OrderPowers { zero_order: bins[0], orders: bins[1..].to_vec(), total: out.power() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceReport {
    pub object: usize,
    pub pairs: u64,
    pub bucket_clicks: u64,
    pub true_counts: Vec<u64>,
    pub accidental_counts: Vec<u64>,
    pub totals: Vec<u64>,
    /// `(true + accidental)/accidental` per detector; `None` stands for an
    /// infinite ratio when no accidentals were recorded.
    pub ta_ratios: Vec<Option<f64>>,
    /// Totals divided by the largest total.
    pub normalized: Vec<f64>,
    /// Detector with the most coincidences.
    pub identified: usize,
}

/// Coincidence run with object `object` in the bucket arm.
///
/// Each pair is born at a uniformly random pixel of the pump aperture (the
/// grid) with perfect position correlation; the bucket clicks with
/// probability equal to the mask there. In the advanced-wave picture the
/// bucket arm relays the object onto the crystal, so given a click the ghost
/// photon reaches detector `k` with probability `P_k/P_total` from
/// [`filter_response`] of the object field. `accidental_mean` is the expected
/// number of accidental coincidences per detector over the whole run.
pub fn simulate_ghost_run(
    objects: &ObjectSet,
    object: usize,
    plate: &HologramPlate,
    geom: &FilterGeometry,
    pairs: u64,
    accidental_mean: f64,
    seed: u64,
) -> Result<CoincidenceReport, GhostError> {
    if object >= objects.len() {
        return Err(GhostError::InvalidParameter(format!("object {object} out of {}", objects.len())));
    }
    if !plate.grid.matches(&objects.grid) || plate.tilts.len() != objects.len() {
        return Err(GhostError::InvalidParameter("plate was not recorded from this object set".into()));
    }
    if !(accidental_mean.is_finite() && accidental_mean >= 0.0) {
        return Err(GhostError::InvalidParameter(format!("accidental mean {accidental_mean} must be ≥ 0")));
    }
    let k = objects.len();
    let response = filter_response(&objects.object_field(object), plate, geom)?;
    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for p in &response.orders {
        acc += if response.total > 0.0 { p / response.total } else { 0.0 };
        cumulative.push(acc);
    }
    let mask = objects.mask(object);
    let npix = objects.grid.len();
    let zero = || (0u64, vec![0u64; k]);
    let (clicks, true_counts) = (0..pairs)
        .into_par_iter()
        .fold(zero, |(mut clicks, mut counts), idx| {
            let mut rng = pulse_rng(seed, idx);
            let px = rng.random_range(0..npix);
            let (u_click, u_det): (f64, f64) = (rng.random(), rng.random());
            if u_click < mask[px] {
                clicks += 1;
                if let Some(d) = cumulative.iter().position(|c| u_det < *c) {
                    counts[d] += 1;
                }
            }
            (clicks, counts)
        })
        .reduce(zero, |(ca, mut a), (cb, b)| {
            a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            (ca + cb, a)
        });
    let accidental_counts: Vec<u64> = (0..k)
        .map(|d| {
            if accidental_mean == 0.0 {
                return 0;
            }
            let mut rng = pulse_rng(seed, pairs + d as u64);
            Poisson::new(accidental_mean).expect("positive mean").sample(&mut rng) as u64
        })
        .collect();
    let totals: Vec<u64> = true_counts.iter().zip(&accidental_counts).map(|(t, a)| t + a).collect();
    let ta_ratios = totals.iter().zip(&accidental_counts).map(|(t, a)| (*a > 0).then(|| *t as f64 / *a as f64)).collect();
    let max = totals.iter().copied().max().unwrap_or(0);
    let normalized = totals.iter().map(|t| if max > 0 { *t as f64 / max as f64 } else { 0.0 }).collect();
    let identified = (0..k).max_by_key(|d| (totals[*d], std::cmp::Reverse(*d))).unwrap_or(0);
    Ok(CoincidenceReport {
        object,
        pairs,
        bucket_clicks: clicks,
        true_counts,
        accidental_counts,
        totals,
        ta_ratios,
        normalized,
        identified,
    })
}
