//! Fields sampled on a periodic grid, stored by their Fourier coefficients.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::grid::Grid;

pub type Spectrum = Vec<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Scalar (one component) or vector (`d` components) field. The spectral
/// coefficients are canonical; samples are produced on demand. A real field
/// keeps Hermitian-symmetric spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: Arc<Grid>,
    comps: Vec<Spectrum>,
    real: bool,
}

impl GridField {
    pub fn zeros(grid: &Arc<Grid>, components: usize, real: bool) -> Self {
        Self {
            grid: grid.clone(),
            comps: vec![vec![ZERO; grid.len()]; components],
            real,
        }
    }

    pub fn from_spectra(grid: &Arc<Grid>, comps: Vec<Spectrum>, real: bool) -> Self {
        assert!(comps.iter().all(|c| c.len() == grid.len()));
        Self {
            grid: grid.clone(),
            comps,
            real,
        }
    }

    pub fn from_physical(grid: &Arc<Grid>, samples: &[Vec<f64>]) -> Self {
        let comps = samples.iter().map(|s| to_spectral_real(grid, s)).collect();
        Self::from_spectra(grid, comps, true)
    }

    pub fn from_physical_complex(grid: &Arc<Grid>, samples: Vec<Vec<Complex64>>) -> Self {
        let comps = samples
            .into_iter()
            .map(|mut s| {
                grid.forward(&mut s);
                s
            })
            .collect();
        Self::from_spectra(grid, comps, false)
    }

    /// Builds a real field from a closure of the position.
    pub fn from_fn<F>(grid: &Arc<Grid>, components: usize, f: F) -> Self
    where
        F: Fn(usize, [f64; 3]) -> f64 + Sync,
    {
        let samples: Vec<Vec<f64>> = (0..components)
            .map(|c| {
                (0..grid.len())
                    .into_par_iter()
                    .map(|i| f(c, grid.coordinate(i)))
                    .collect()
            })
            .collect();
        Self::from_physical(grid, &samples)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.comps.len()
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn spectrum(&self, c: usize) -> &[Complex64] {
        &self.comps[c]
    }

    pub fn spectrum_mut(&mut self, c: usize) -> &mut Spectrum {
        &mut self.comps[c]
    }

    pub fn spectra(&self) -> &[Spectrum] {
        &self.comps
    }

    pub fn into_spectra(self) -> Vec<Spectrum> {
        self.comps
    }

    /// Real samples of every component (imaginary parts dropped for real
    /// fields, where they vanish up to rounding).
    pub fn physical(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.comps.len());
        let mut c = 0;
        while c < self.comps.len() {
            if c + 1 < self.comps.len() {
                let (a, b) = to_physical_pair(&self.grid, &self.comps[c], &self.comps[c + 1]);
                out.push(a);
                out.push(b);
                c += 2;
            } else {
                out.push(to_physical_real(&self.grid, &self.comps[c]));
                c += 1;
            }
        }
        out
    }

    pub fn physical_complex(&self) -> Vec<Vec<Complex64>> {
        self.comps
            .iter()
            .map(|s| {
                let mut w = s.clone();
                self.grid.inverse(&mut w);
                w
            })
            .collect()
    }

    /// Zero-mode coefficient (spatial mean) of a component.
    pub fn mean(&self, c: usize) -> Complex64 {
        self.comps[c][0]
    }

    pub fn map_spectral<F>(&self, f: F) -> Self
    where
        F: Fn(usize, Complex64) -> Complex64 + Sync,
    {
        let comps = self
            .comps
            .iter()
            .map(|s| s.par_iter().enumerate().map(|(i, &v)| f(i, v)).collect())
            .collect();
        Self::from_spectra(&self.grid, comps, self.real)
    }

    /// Multiplies every component by a real radial multiplier.
    pub fn apply_multiplier(&self, m: &[f64]) -> Self {
        self.map_spectral(|i, v| v * m[i])
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_spectral(|_, v| v * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.components(), other.components());
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Self::from_spectra(&self.grid, comps, self.real && other.real)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Gradient of a scalar field.
    pub fn gradient(&self) -> Self {
        assert_eq!(self.components(), 1, "gradient needs a scalar field");
        let d = self.grid.dim();
        let comps = (0..d)
            .map(|a| {
                self.comps[0]
                    .par_iter()
                    .enumerate()
                    .map(|(i, &v)| I * self.grid.derivative_wavevector(i)[a] * v)
                    .collect()
            })
            .collect();
        Self::from_spectra(&self.grid, comps, self.real)
    }

    /// Divergence of a vector field.
    pub fn divergence(&self) -> Self {
        let d = self.grid.dim();
        assert_eq!(self.components(), d, "divergence needs a vector field");
        let out = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let k = self.grid.derivative_wavevector(i);
                (0..d).fold(ZERO, |acc, a| acc + I * k[a] * self.comps[a][i])
            })
            .collect();
        Self::from_spectra(&self.grid, vec![out], self.real)
    }

    pub fn laplacian(&self) -> Self {
        let k2: Vec<f64> = self.grid.wavenumbers().iter().map(|k| -k * k).collect();
        self.apply_multiplier(&k2)
    }

    /// Partial derivative `∂^α` with multi-index `alpha`.
    pub fn partial(&self, alpha: &[u32]) -> Self {
        self.map_spectral(|i, v| {
            let k = self.grid.derivative_wavevector(i);
            let mut m = Complex64::new(1.0, 0.0);
            for (a, &p) in alpha.iter().enumerate() {
                m *= (I * k[a]).powu(p);
            }
            m * v
        })
    }

    /// Squared L² norm by Parseval, `V Σ|c_ξ|²`, summed over components.
    pub fn l2_squared(&self) -> f64 {
        let v = self.grid.volume();
        self.comps
            .iter()
            .map(|s| s.iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            * v
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_squared().sqrt()
    }

    /// Zeroes every mode outside the 2/3 dealiasing radius.
    pub fn dealias(&mut self) {
        let mask = self.grid.dealias_mask();
        for s in &mut self.comps {
            s.par_iter_mut().zip(&mask).for_each(|(c, &keep)| {
                if !keep {
                    *c = ZERO;
                }
            });
        }
    }

    /// Projects every component onto Hermitian-symmetric spectra.
    pub fn symmetrize(&mut self) {
        for s in &mut self.comps {
            hermitian_project(&self.grid, s);
        }
        self.real = true;
    }

    /// Largest deviation from Hermitian symmetry over all components.
    pub fn hermitian_defect(&self) -> f64 {
        self.comps
            .iter()
            .map(|s| {
                (0..s.len())
                    .map(|i| (s[i] - s[self.grid.conjugate_index(i)].conj()).norm())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Single component as a scalar field.
    pub fn component(&self, c: usize) -> Self {
        Self::from_spectra(&self.grid, vec![self.comps[c].clone()], self.real)
    }

    /// Stacks scalar fields into one multi-component field.
    pub fn stack(parts: &[&GridField]) -> Self {
        let grid = parts[0].grid.clone();
        let real = parts.iter().all(|p| p.real);
        let comps = parts.iter().flat_map(|p| p.comps.iter().cloned()).collect();
        Self::from_spectra(&grid, comps, real)
    }
}

fn hermitian_project(grid: &Grid, s: &mut [Complex64]) {
    let orig = s.to_vec();
    s.par_iter_mut().enumerate().for_each(|(i, c)| {
        let j = grid.conjugate_index(i);
        *c = 0.5 * (orig[i] + orig[j].conj());
    });
}

/// Samples of a real field from its spectrum.
pub fn to_physical_real(grid: &Grid, spec: &[Complex64]) -> Vec<f64> {
    let mut w = spec.to_vec();
    grid.inverse(&mut w);
    w.into_iter().map(|c| c.re).collect()
}

/// Two real fields through one complex transform.
pub fn to_physical_pair(grid: &Grid, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let mut w: Vec<Complex64> = a.par_iter().zip(b).map(|(x, y)| x + I * y).collect();
    grid.inverse(&mut w);
    w.into_iter().map(|c| (c.re, c.im)).unzip()
}

pub fn to_spectral_real(grid: &Grid, samples: &[f64]) -> Spectrum {
    let mut w: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    grid.forward(&mut w);
    w
}

/// Spectra of two real sample arrays through one complex transform.
pub fn to_spectral_pair(grid: &Grid, a: &[f64], b: &[f64]) -> (Spectrum, Spectrum) {
    let mut w: Vec<Complex64> = a
        .par_iter()
        .zip(b)
        .map(|(&x, &y)| Complex64::new(x, y))
        .collect();
    grid.forward(&mut w);
    (0..w.len())
        .into_par_iter()
        .map(|i| {
            let c = w[i];
            let cm = w[grid.conjugate_index(i)].conj();
            (0.5 * (c + cm), -0.5 * I * (c - cm))
        })
        .unzip()
}

/// Spectra of many real sample arrays, paired two at a time.
pub fn to_spectral_many(grid: &Grid, samples: &[&[f64]]) -> Vec<Spectrum> {
    let mut out = Vec::with_capacity(samples.len());
    let mut c = 0;
    while c < samples.len() {
        if c + 1 < samples.len() {
            let (a, b) = to_spectral_pair(grid, samples[c], samples[c + 1]);
            out.push(a);
            out.push(b);
            c += 2;
        } else {
            out.push(to_spectral_real(grid, samples[c]));
            c += 1;
        }
    }
    out
}

/// Samples of many real spectra, paired two at a time.
pub fn to_physical_many(grid: &Grid, spectra: &[&[Complex64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(spectra.len());
    let mut c = 0;
    while c < spectra.len() {
        if c + 1 < spectra.len() {
            let (a, b) = to_physical_pair(grid, spectra[c], spectra[c + 1]);
            out.push(a);
            out.push(b);
            c += 2;
        } else {
            out.push(to_physical_real(grid, spectra[c]));
            c += 1;
        }
    }
    out
}
