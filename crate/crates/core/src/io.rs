//! Field and image serialization: 16-bit binary PGM and lossless field CSV.
//!
//! PGM rows run top to bottom, so grid row `ny − 1` (largest `y`) is written first.

use crate::field::{ComplexField, FieldError, GridSpec};
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("malformed field CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Grayscale image with samples in `[0, maxval]`, rows top to bottom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl GrayImage {
    /// Samples scaled to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        self.data.iter().map(|v| *v as f64 / self.maxval as f64).collect()
    }

    /// Values in `[0, 1]` (row-major, top row first) quantized to 16 bits.
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Self {
        let data = values.iter().map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
        Self { width, height, maxval: 65535, data }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            for v in &self.data {
                out.extend_from_slice(&v.to_be_bytes());
            }
        } else {
            out.extend(self.data.iter().map(|v| *v as u8));
        }
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self, IoError> {
        let mut pos = 0;
        let mut token = || -> Result<String, IoError> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(IoError::Pgm("truncated header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        if token()? != "P5" {
            return Err(IoError::Pgm("expected binary P5 magic".into()));
        }
        let num = |t: String| t.parse::<usize>().map_err(|_| IoError::Pgm(format!("bad header number {t:?}")));
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
            return Err(IoError::Pgm(format!("unsupported dimensions {width}×{height} or maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let n = width * height;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let raster = bytes.get(pos..pos + need).ok_or_else(|| IoError::Pgm("truncated raster".into()))?;
        let data: Vec<u16> =
            if wide { raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect() } else { raster.iter().map(|b| *b as u16).collect() };
        if data.iter().any(|v| *v as usize > maxval) {
            return Err(IoError::Pgm("sample exceeds maxval".into()));
        }
        Ok(Self { width, height, maxval: maxval as u16, data })
    }
}

fn flip_rows(nx: usize, ny: usize, values: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(nx * ny);
    for r in 0..ny {
        let j = ny - 1 - r;
        out.extend((0..nx).map(|i| values(j * nx + i)));
    }
    out
}

/// `|u|²` scaled to the peak.
pub fn intensity_image(field: &ComplexField) -> GrayImage {
    let g = field.grid();
    let peak = field.data().iter().map(|u| u.norm_sqr()).fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let v = flip_rows(g.nx(), g.ny(), |k| field.data()[k].norm_sqr() * scale);
    GrayImage::from_unit(g.nx(), g.ny(), &v)
}

/// Phase mapped from `[−π, π]` onto `[0, 65535]`.
pub fn phase_image(field: &ComplexField) -> GrayImage {
    let g = field.grid();
    let v = flip_rows(g.nx(), g.ny(), |k| (field.data()[k].arg() + PI) / (2.0 * PI));
    GrayImage::from_unit(g.nx(), g.ny(), &v)
}

/// Any phase map, wrapped into `[−π, π)` first.
pub fn wrapped_phase_image(nx: usize, ny: usize, phase: &[f64]) -> GrayImage {
    let v = flip_rows(nx, ny, |k| ((phase[k] + PI).rem_euclid(2.0 * PI)) / (2.0 * PI));
    GrayImage::from_unit(nx, ny, &v)
}

/// Image samples in grid order (row 0 = smallest `y`), scaled to `[0, 1]`.
pub fn image_to_grid_order(img: &GrayImage) -> Vec<f64> {
    let n = img.normalized();
    flip_rows(img.width, img.height, |k| n[k])
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// `x,y,re,im` per sample in grid order, LF line endings.
pub fn field_to_csv(field: &ComplexField) -> String {
    let g = field.grid();
    let mut s = String::with_capacity(g.len() * 64);
    s.push_str("x,y,re,im\n");
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            let u = field.data()[g.index(i, j)];
            s.push_str(&format!("{},{},{},{}\n", fmt_f64(g.x(i)), fmt_f64(g.y(j)), fmt_f64(u.re), fmt_f64(u.im)));
        }
    }
    s
}

/// Inverse of [`field_to_csv`] on a known grid.
pub fn field_from_csv(grid: GridSpec, text: &str) -> Result<ComplexField, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "x,y,re,im" => {}
        _ => return Err(IoError::Csv { line: 1, msg: "expected header x,y,re,im".into() }),
    }
    let mut data = Vec::with_capacity(grid.len());
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(IoError::Csv { line: n + 1, msg: format!("{} fields", f.len()) });
        }
        let p = |s: &str| s.trim().parse::<f64>().map_err(|e| IoError::Csv { line: n + 1, msg: e.to_string() });
        let k = data.len();
        if k >= grid.len() {
            return Err(IoError::Csv { line: n + 1, msg: "more rows than grid samples".into() });
        }
        let (i, j) = (k % grid.nx(), k / grid.nx());
        let (x, y) = (p(f[0])?, p(f[1])?);
        let tol = 1e-9 * grid.dx().max(grid.dy());
        if (x - grid.x(i)).abs() > tol || (y - grid.y(j)).abs() > tol {
            return Err(IoError::Csv { line: n + 1, msg: format!("coordinates ({x}, {y}) off the grid") });
        }
        data.push(Complex64::new(p(f[2])?, p(f[3])?));
    }
    Ok(ComplexField::new(grid, data)?)
}
