//! Centered unitary FFTs.
//!
//! For even `n` the centered transform equals a standard FFT with the input
//! and output modulated by `(-1)^k`, plus a global sign `(-1)^(n/2)`. Using
//! the modulation instead of explicit shifts keeps the result exact and lets
//! us process many contiguous lines in a single rustfft call.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// A planned centered, unitary 1-D transform of a fixed length.
#[derive(Clone)]
pub(crate) struct CenteredFft {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl CenteredFft {
    pub(crate) fn new(n: usize) -> Self {
        debug_assert!(n % 2 == 0);
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut scale = 1.0 / (n as f64).sqrt();
        if (n / 2) % 2 == 1 {
            scale = -scale;
        }
        Self { n, fft, scale }
    }

    /// Transforms every consecutive run of `n` samples in `buf` in place.
    pub(crate) fn process(&self, buf: &mut [Complex64]) {
        debug_assert!(buf.len() % self.n == 0);
        modulate(buf, self.n, 1.0);
        self.fft.process(buf);
        modulate(buf, self.n, self.scale);
    }
}

fn modulate(buf: &mut [Complex64], n: usize, scale: f64) {
    for line in buf.chunks_exact_mut(n) {
        for (k, v) in line.iter_mut().enumerate() {
            *v *= if k % 2 == 0 { scale } else { -scale };
        }
    }
}

/// Centered unitary 2-D transform of a row-major `ny × nx` array.
pub(crate) fn fft2_centered(data: &mut [Complex64], nx: usize, ny: usize) {
    CenteredFft::new(nx).process(data);
    let mut t = transpose(data, nx, ny);
    CenteredFft::new(ny).process(&mut t);
    let back = transpose(&t, ny, nx);
    data.copy_from_slice(&back);
}

fn transpose(data: &[Complex64], nx: usize, ny: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    const B: usize = 32;
    for jb in (0..ny).step_by(B) {
        for ib in (0..nx).step_by(B) {
            for j in jb..(jb + B).min(ny) {
                for i in ib..(ib + B).min(nx) {
                    out[i * ny + j] = data[j * nx + i];
                }
            }
        }
    }
    out
}
