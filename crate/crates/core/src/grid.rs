//! Periodic grids, wavenumber lattices and multi-dimensional FFTs.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("points per axis must be a power of two >= 4, got {0}")]
    Points(usize),
    #[error("box scale must be positive and finite, got {0}")]
    BoxScale(f64),
}

/// A `d`-dimensional periodic box of side `2πΛ` sampled with `N` points per
/// axis. Frequencies live on the lattice `(1/Λ)ℤ^d`.
#[derive(Clone)]
pub struct Grid {
    d: usize,
    n: usize,
    lambda: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("d", &self.d)
            .field("n", &self.n)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.n == other.n && self.lambda == other.lambda
    }
}

impl Grid {
    pub fn new(d: usize, n: usize, lambda: f64) -> Result<Arc<Self>, GridError> {
        if !(d == 2 || d == 3) {
            return Err(GridError::Dimension(d));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(GridError::Points(n));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(GridError::BoxScale(lambda));
        }
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Self {
            d,
            n,
            lambda,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }))
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Total number of samples `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn box_length(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.lambda
    }

    pub fn volume(&self) -> f64 {
        self.box_length().powi(self.d as i32)
    }

    pub fn spacing(&self) -> f64 {
        self.box_length() / self.n as f64
    }

    /// Cell volume `Δx^d` used by rectangle-rule quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Largest resolved frequency along an axis, `N/(2Λ)`.
    pub fn nyquist(&self) -> f64 {
        self.n as f64 / (2.0 * self.lambda)
    }

    /// Radius kept by the 2/3 dealiasing rule.
    pub fn dealias_radius(&self) -> f64 {
        2.0 / 3.0 * self.nyquist()
    }

    /// Signed integer frequency of index `i` along one axis.
    #[inline]
    pub fn signed_index(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Multi-index of a flat position.
    #[inline]
    pub fn unflatten(&self, mut flat: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in (0..self.d).rev() {
            out[a] = flat % self.n;
            flat /= self.n;
        }
        out
    }

    #[inline]
    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().take(self.d).fold(0, |acc, &i| acc * self.n + i)
    }

    /// Wavevector `ξ` of a flat spectral position.
    #[inline]
    pub fn wavevector(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut k = [0.0; 3];
        for a in 0..self.d {
            k[a] = self.signed_index(idx[a]) as f64 / self.lambda;
        }
        k
    }

    /// Wavevector used for spectral derivatives: the Nyquist component is
    /// dropped so that derivatives of real fields stay real.
    #[inline]
    pub fn derivative_wavevector(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut k = [0.0; 3];
        for a in 0..self.d {
            if idx[a] != self.n / 2 {
                k[a] = self.signed_index(idx[a]) as f64 / self.lambda;
            }
        }
        k
    }

    #[inline]
    pub fn wavenumber(&self, flat: usize) -> f64 {
        let k = self.wavevector(flat);
        (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
    }

    /// `|ξ|` for every lattice point in flat order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.wavenumber(i)).collect()
    }

    /// Flat index of `-ξ`.
    #[inline]
    pub fn conjugate_index(&self, flat: usize) -> usize {
        let idx = self.unflatten(flat);
        let mut out = [0usize; 3];
        for a in 0..self.d {
            out[a] = (self.n - idx[a]) % self.n;
        }
        self.flatten(&out[..self.d])
    }

    /// Physical coordinate of a flat sample position.
    pub fn coordinate(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.d {
            x[a] = idx[a] as f64 * h;
        }
        x
    }

    /// Mask of modes kept by the radial 2/3 rule.
    pub fn dealias_mask(&self) -> Vec<bool> {
        let cut = self.dealias_radius();
        (0..self.len()).map(|i| self.wavenumber(i) < cut).collect()
    }

    /// In-place forward transform, normalized so that
    /// `u(x) = Σ_ξ c_ξ e^{iξ·x}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.fwd);
        let scale = 1.0 / self.len() as f64;
        data.par_iter_mut().for_each(|c| *c *= scale);
    }

    /// In-place inverse transform (spectral coefficients to samples).
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv);
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len(), "field length does not match grid");
        let n = self.n;
        for axis in 0..self.d {
            let inner = n.pow((self.d - 1 - axis) as u32);
            if inner == 1 {
                data.par_chunks_mut(n).for_each(|row| plan.process(row));
            } else {
                let block = n * inner;
                let mut scratch = vec![Complex64::new(0.0, 0.0); data.len()];
                data.par_chunks(block)
                    .zip(scratch.par_chunks_mut(block))
                    .for_each(|(src, dst)| transpose(src, dst, n, inner));
                scratch.par_chunks_mut(n).for_each(|row| plan.process(row));
                scratch
                    .par_chunks(block)
                    .zip(data.par_chunks_mut(block))
                    .for_each(|(src, dst)| transpose(src, dst, inner, n));
            }
        }
    }
}

/// `dst[c][r] = src[r][c]` for a `rows × cols` block.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const TILE: usize = 32;
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
