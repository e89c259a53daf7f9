//! Per-frequency linear theory of the perturbed two-fluid system.
//!
//! For a wavevector `ξ = k e` the compressible dynamics of one mode live in
//! the real coordinates `x = (n̂⁺, n̂⁻, p⁺, p⁻)` with `p± = i e·û±`; the
//! transverse velocity components decay at rate `k²`.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix2, Matrix4, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::besov::{BesovError, DyadicBank};
use crate::closure::{ClosureCoefficients, ClosureError, ROOT_SEPARATION_MIN};
use crate::field::GridField;
use crate::grid::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("characteristic roots r+ = {r_plus}, r- = {r_minus} are too close to separate")]
    DegenerateRoots { r_plus: f64, r_minus: f64 },
    #[error("closure coefficients lie outside the stability window")]
    NotStable,
    #[error("no admissible cross-term weight found down to {tried}")]
    NoDelta { tried: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Closure(#[from] ClosureError),
    #[error(transparent)]
    Besov(#[from] BesovError),
}

pub type Result<T> = std::result::Result<T, SpectralError>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Reduced symbol `A(ξ)` of one decoupled block acting on `(N̂, M̂)`.
pub fn assemble_reduced_symbol(k: f64, kappa: f64, r: f64) -> Matrix2<f64> {
    let sk = kappa.sqrt();
    Matrix2::new(
        0.0,
        -sk * k,
        r * k / sk + sk * k * k * k,
        -2.0 * k * k,
    )
}

/// `λ = −k² ± √((1−κ)k⁴ − r k²)`, the `+` branch first.
pub fn eigenvalues_closed_form(k: f64, kappa: f64, r: f64) -> [Complex64; 2] {
    let k2 = k * k;
    let root = Complex64::new((1.0 - kappa) * k2 * k2 - r * k2, 0.0).sqrt();
    [-k2 + root, -k2 - root]
}

/// Largest distance between two eigenvalue pairs under the best matching.
pub fn pair_distance(a: [Complex64; 2], b: [Complex64; 2]) -> f64 {
    let straight = (a[0] - b[0]).norm().max((a[1] - b[1]).norm());
    let crossed = (a[0] - b[1]).norm().max((a[1] - b[0]).norm());
    straight.min(crossed)
}

/// Real generator of one mode in the coordinates `(n̂⁺, n̂⁻, p⁺, p⁻)`.
pub fn mode_generator(k: f64, kappa: f64, beta: &[f64; 4]) -> Matrix4<f64> {
    let sk = kappa.sqrt();
    let [b1, b2, b3, b4] = *beta;
    let cap = sk * k * k * k;
    let k2 = k * k;
    Matrix4::new(
        0.0, 0.0, -sk * k, 0.0,
        0.0, 0.0, 0.0, -sk * k,
        k * b1 / sk + cap, k * b2 / sk, -2.0 * k2, 0.0,
        k * b3 / sk, k * b4 / sk + cap, 0.0, -2.0 * k2,
    )
}

/// Full `(2+2d)×(2+2d)` symbol acting on `(n̂⁺, n̂⁻, û⁺, û⁻)`.
pub fn assemble_full_symbol(
    xi: &[f64],
    kappa: f64,
    coeffs: &ClosureCoefficients,
) -> Result<DMatrix<Complex64>> {
    check_roots(coeffs)?;
    let d = xi.len();
    let sk = kappa.sqrt();
    let [b1, b2, b3, b4] = coeffs.beta;
    let k2: f64 = xi.iter().map(|x| x * x).sum();
    let mut m = DMatrix::<Complex64>::zeros(2 + 2 * d, 2 + 2 * d);
    let up = 2;
    let um = 2 + d;
    for a in 0..d {
        m[(0, up + a)] = -I * sk * xi[a];
        m[(1, um + a)] = -I * sk * xi[a];
        let grad = -I * xi[a];
        m[(up + a, 0)] = grad * (b1 / sk + sk * k2);
        m[(up + a, 1)] = grad * (b2 / sk);
        m[(um + a, 0)] = grad * (b3 / sk);
        m[(um + a, 1)] = grad * (b4 / sk + sk * k2);
        for b in 0..d {
            let visc = -xi[a] * xi[b] - if a == b { k2 } else { 0.0 };
            m[(up + a, up + b)] = Complex64::new(visc, 0.0);
            m[(um + a, um + b)] = Complex64::new(visc, 0.0);
        }
    }
    Ok(m)
}

fn check_roots(coeffs: &ClosureCoefficients) -> Result<()> {
    if !((coeffs.r_plus - coeffs.r_minus).abs() >= ROOT_SEPARATION_MIN) {
        return Err(SpectralError::DegenerateRoots {
            r_plus: coeffs.r_plus,
            r_minus: coeffs.r_minus,
        });
    }
    Ok(())
}

/// Four scalar/vector fields of the two-fluid system.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoFluidFields {
    pub n_plus: GridField,
    pub n_minus: GridField,
    pub u_plus: GridField,
    pub u_minus: GridField,
}

impl TwoFluidFields {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        let d = grid.dim();
        Self {
            n_plus: GridField::zeros(grid, 1, true),
            n_minus: GridField::zeros(grid, 1, true),
            u_plus: GridField::zeros(grid, d, true),
            u_minus: GridField::zeros(grid, d, true),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.n_plus.grid()
    }

    pub fn is_real(&self) -> bool {
        self.n_plus.is_real() && self.n_minus.is_real() && self.u_plus.is_real() && self.u_minus.is_real()
    }

    /// All components as one list: `n⁺, n⁻, u⁺₁..u⁺_d, u⁻₁..u⁻_d`.
    pub fn spectra(&self) -> Vec<&[Complex64]> {
        let mut out = vec![self.n_plus.spectrum(0), self.n_minus.spectrum(0)];
        for f in [&self.u_plus, &self.u_minus] {
            for c in 0..f.components() {
                out.push(f.spectrum(c));
            }
        }
        out
    }

    pub fn from_spectra(grid: &Arc<Grid>, mut comps: Vec<Vec<Complex64>>, real: bool) -> Self {
        let d = grid.dim();
        assert_eq!(comps.len(), 2 + 2 * d);
        let um: Vec<_> = comps.drain(2 + d..).collect();
        let up: Vec<_> = comps.drain(2..).collect();
        let nm = comps.pop().expect("n-");
        let np = comps.pop().expect("n+");
        Self {
            n_plus: GridField::from_spectra(grid, vec![np], real),
            n_minus: GridField::from_spectra(grid, vec![nm], real),
            u_plus: GridField::from_spectra(grid, up, real),
            u_minus: GridField::from_spectra(grid, um, real),
        }
    }

    pub fn into_spectra(self) -> Vec<Vec<Complex64>> {
        let mut out = self.n_plus.into_spectra();
        out.extend(self.n_minus.into_spectra());
        out.extend(self.u_plus.into_spectra());
        out.extend(self.u_minus.into_spectra());
        out
    }

    pub fn l2_squared(&self) -> f64 {
        self.n_plus.l2_squared()
            + self.n_minus.l2_squared()
            + self.u_plus.l2_squared()
            + self.u_minus.l2_squared()
    }
}

/// The combinations `N₁⁺, N₂⁻, M₁⁺, M₂⁻` and the weights that built them.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalizedFields {
    pub n1: GridField,
    pub n2: GridField,
    pub m1: GridField,
    pub m2: GridField,
    /// `(β₃, r₊ − β₁, r₋ − β₁)`.
    pub weights: [f64; 3],
}

fn combine(a: &GridField, wa: f64, b: &GridField, wb: f64) -> GridField {
    a.scale(wa).add(&b.scale(wb))
}

/// `N₁⁺ = β₃n⁺ + (r₊−β₁)n⁻`, `N₂⁻ = β₃n⁺ + (r₋−β₁)n⁻` and likewise for
/// the compressible velocities.
pub fn diagonalize_fields(
    n_plus: &GridField,
    n_minus: &GridField,
    qu_plus: &GridField,
    qu_minus: &GridField,
    coeffs: &ClosureCoefficients,
) -> Result<DiagonalizedFields> {
    check_roots(coeffs)?;
    let b3 = coeffs.beta[2];
    let wp = coeffs.r_plus - coeffs.beta[0];
    let wm = coeffs.r_minus - coeffs.beta[0];
    Ok(DiagonalizedFields {
        n1: combine(n_plus, b3, n_minus, wp),
        n2: combine(n_plus, b3, n_minus, wm),
        m1: combine(qu_plus, b3, qu_minus, wp),
        m2: combine(qu_plus, b3, qu_minus, wm),
        weights: [b3, wp, wm],
    })
}

/// Inverse of [`diagonalize_fields`]: returns `(n⁺, n⁻, Qu⁺, Qu⁻)`.
pub fn recombine_fields(
    fields: &DiagonalizedFields,
) -> Result<(GridField, GridField, GridField, GridField)> {
    let [b3, wp, wm] = fields.weights;
    let gap = wp - wm;
    if !(gap.abs() >= ROOT_SEPARATION_MIN) {
        return Err(SpectralError::DegenerateRoots {
            r_plus: wp,
            r_minus: wm,
        });
    }
    // n⁻ = (N₁ − N₂)/(r₊ − r₋), β₃n⁺ = ((β₁−r₋)N₁ + (r₊−β₁)N₂)/(r₊ − r₋).
    let back = |x1: &GridField, x2: &GridField| {
        (
            combine(x1, -wm / (gap * b3), x2, wp / (gap * b3)),
            combine(x1, 1.0 / gap, x2, -1.0 / gap),
        )
    };
    let (np, nm) = back(&fields.n1, &fields.n2);
    let (up, um) = back(&fields.m1, &fields.m2);
    Ok((np, nm, up, um))
}

/// Samples of `U(ξ)` and `H(ξ)` on the lattice; both vanish at `ξ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersiveMultipliers {
    pub u: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn dispersive_multipliers(grid: &Grid, kappa: f64, r: f64) -> DispersiveMultipliers {
    let (u, h) = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let k2 = grid.wavenumber(i).powi(2);
            if k2 == 0.0 {
                (0.0, 0.0)
            } else {
                let s = r / kappa + k2;
                ((k2 / s).sqrt(), (k2 * s).sqrt())
            }
        })
        .unzip();
    DispersiveMultipliers { u, h }
}

/// `z = U⁻¹∇N + iQM`, assembled spectrally; the mean mode is dropped.
pub fn z_variables(n: &GridField, qm: &GridField, u: &[f64]) -> GridField {
    let grid = n.grid().clone();
    let d = grid.dim();
    let comps = (0..d)
        .map(|a| {
            (0..grid.len())
                .into_par_iter()
                .map(|i| {
                    if u[i] == 0.0 {
                        return Complex64::new(0.0, 0.0);
                    }
                    let k = grid.derivative_wavevector(i)[a];
                    I * k * n.spectrum(0)[i] / u[i] + I * qm.spectrum(a)[i]
                })
                .collect()
        })
        .collect();
    GridField::from_spectra(&grid, comps, false)
}

/// Per-mode multiplier `e^{−i|ξ|√(r₂ + r₃κ|ξ|²)t}`, times `e^{−r₁|ξ|²t}` when
/// `viscous` is set.
pub fn semigroup_multiplier(k: f64, t: f64, kappa: f64, r: [f64; 3], viscous: bool) -> Complex64 {
    let [r1, r2, r3] = r;
    let omega = k * (r2 + r3 * kappa * k * k).sqrt();
    let phase = Complex64::from_polar(1.0, -omega * t);
    if viscous {
        phase * (-r1 * k * k * t).exp()
    } else {
        phase
    }
}

pub fn propagate_semigroup(
    field: &GridField,
    t: f64,
    kappa: f64,
    r: [f64; 3],
    viscous: bool,
) -> Result<GridField> {
    if !(t >= 0.0) || !(kappa > 0.0) || r.iter().any(|x| !(*x > 0.0)) {
        return Err(SpectralError::InvalidArgument(
            "propagate_semigroup needs t >= 0 and positive kappa, r1, r2, r3".into(),
        ));
    }
    let grid = field.grid().clone();
    let out = field.map_spectral(|i, v| v * semigroup_multiplier(grid.wavenumber(i), t, kappa, r, viscous));
    Ok(GridField::from_spectra(&grid, out.into_spectra(), false))
}

/// Gram matrix of the dyadic Lyapunov functional for one mode, in the
/// coordinates `(n̂⁺, n̂⁻, p⁺, p⁻)`.
pub fn lyapunov_gram(k: f64, kappa: f64, beta: &[f64; 4], delta1: f64) -> Matrix4<f64> {
    let [b1, b2, b3, b4] = *beta;
    let k2 = k * k;
    let x = -0.5 * delta1 * k / kappa.sqrt();
    Matrix4::new(
        b1 / (2.0 * b2 * kappa) + k2 / (2.0 * b2), 0.5 / kappa, x / b2, 0.0,
        0.5 / kappa, b4 / (2.0 * b3 * kappa) + k2 / (2.0 * b3), 0.0, x / b3,
        x / b2, 0.0, 0.5 / b2, 0.0,
        0.0, x / b3, 0.0, 0.5 / b3,
    )
}

/// Density part of the functional at `δ₁ = 0` and `k = 0`, scaled by `κ`:
/// positive definite exactly when `β₁β₄ > β₂β₃` (for positive `β₂, β₃`).
pub fn density_gram(beta: &[f64; 4]) -> Matrix2<f64> {
    let [b1, b2, b3, b4] = *beta;
    Matrix2::new(b1 / (2.0 * b2), 0.5, 0.5, b4 / (2.0 * b3))
}

/// Diagonal weight of `‖(κ^{-1/2}n, ∇n, u)‖²` for one mode.
fn norm_weight(k: f64, kappa: f64) -> [f64; 4] {
    let w = 1.0 / kappa + k * k;
    [w, w, 1.0, 1.0]
}

fn scaled(m: &Matrix4<f64>, w: &[f64; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[(i, j)] / (w[i] * w[j]).sqrt())
}

/// Extreme eigenvalues of `G` relative to the norm weight at wavenumber `k`.
pub fn gram_bounds(k: f64, kappa: f64, beta: &[f64; 4], delta1: f64) -> (f64, f64) {
    let g = scaled(&lyapunov_gram(k, kappa, beta, delta1), &norm_weight(k, kappa));
    let ev = SymmetricEigen::new(g).eigenvalues;
    (ev.min(), ev.max())
}

/// Largest eigenvalue of `G L + Lᵀ G` relative to `G`: nonpositive means the
/// functional does not grow along the linear flow of that mode.
fn dissipation_bounds(k: f64, kappa: f64, beta: &[f64; 4], delta1: f64) -> (f64, f64) {
    let g = lyapunov_gram(k, kappa, beta, delta1);
    let l = mode_generator(k, kappa, beta);
    let d = g * l + l.transpose() * g;
    let Some(chol) = g.cholesky() else {
        return (f64::INFINITY, f64::INFINITY);
    };
    // Generalized eigenvalues of (D, G) via G = CCᵀ.
    let linv = chol.l().try_inverse().expect("triangular factor is invertible");
    let m = linv * d * linv.transpose();
    let ev = SymmetricEigen::new(0.5 * (m + m.transpose())).eigenvalues;
    (ev.min(), ev.max())
}

/// Distinct nonzero `|ξ|` of the lattice within `radius`.
pub fn lattice_radii(grid: &Grid, radius: f64) -> Vec<f64> {
    let mut k: Vec<f64> = grid
        .wavenumbers()
        .into_iter()
        .filter(|&x| x > 0.0 && x <= radius)
        .collect();
    k.sort_by(|a, b| a.partial_cmp(b).expect("finite wavenumbers"));
    k.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    k
}

/// Constants of the Lyapunov equivalence and decay for a set of radii.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovConstants {
    pub delta1: f64,
    /// `c` in `c·S ≤ E`.
    pub lower: f64,
    /// `C` in `E ≤ C·S`.
    pub upper: f64,
    /// `c₀` in `dE/dt ≤ −c₀|ξ|²E` per mode.
    pub c0: f64,
}

/// Largest `δ₁ ∈ {2^{-m}}` keeping the Gram matrices at least 90% as
/// positive as at `δ₁ = 0` and the functional non-increasing on every
/// radius, together with the resulting constants.
pub fn select_delta1(radii: &[f64], kappa: f64, coeffs: &ClosureCoefficients) -> Result<LyapunovConstants> {
    if !coeffs.stable {
        return Err(SpectralError::NotStable);
    }
    let beta = &coeffs.beta;
    let base: Vec<f64> = radii.par_iter().map(|&k| gram_bounds(k, kappa, beta, 0.0).0).collect();
    for m in 0..60 {
        let delta1 = 2f64.powi(-m);
        let ok = radii.par_iter().zip(&base).all(|(&k, &b)| {
            let (lo, _) = gram_bounds(k, kappa, beta, delta1);
            if lo < 0.9 * b {
                return false;
            }
            let (_, top) = dissipation_bounds(k, kappa, beta, delta1);
            top <= 1e-12
        });
        if ok {
            return Ok(lyapunov_constants(radii, kappa, coeffs, delta1));
        }
    }
    Err(SpectralError::NoDelta { tried: 2f64.powi(-59) })
}

pub fn lyapunov_constants(radii: &[f64], kappa: f64, coeffs: &ClosureCoefficients, delta1: f64) -> LyapunovConstants {
    let beta = &coeffs.beta;
    let per: Vec<(f64, f64, f64)> = radii
        .par_iter()
        .map(|&k| {
            let (lo, hi) = gram_bounds(k, kappa, beta, delta1);
            let (_, top) = dissipation_bounds(k, kappa, beta, delta1);
            (lo, hi, -top / (k * k))
        })
        .collect();
    // Transverse velocity: weight 1/(2β), decay 2k².
    let tl = 0.5 / beta[1].max(beta[2]);
    let tu = 0.5 / beta[1].min(beta[2]);
    LyapunovConstants {
        delta1,
        lower: per.iter().map(|p| p.0).fold(tl, f64::min),
        upper: per.iter().map(|p| p.1).fold(tu, f64::max),
        c0: per.iter().map(|p| p.2).fold(2.0, f64::min),
    }
}

/// Per-mode Lyapunov density and norm density `(E_ξ, S_ξ)` for one lattice
/// point, already including the volume factor.
fn mode_energy(
    fields: &TwoFluidFields,
    i: usize,
    kappa: f64,
    beta: &[f64; 4],
    delta1: f64,
) -> (f64, f64) {
    let grid = fields.grid();
    let d = grid.dim();
    let xi = grid.derivative_wavevector(i);
    let kd = (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt();
    let n = [fields.n_plus.spectrum(0)[i], fields.n_minus.spectrum(0)[i]];
    let mut p = [Complex64::new(0.0, 0.0); 2];
    let mut u2 = [0.0; 2];
    for (s, u) in [&fields.u_plus, &fields.u_minus].into_iter().enumerate() {
        let mut dot = Complex64::new(0.0, 0.0);
        for a in 0..d {
            let c = u.spectrum(a)[i];
            u2[s] += c.norm_sqr();
            if kd > 0.0 {
                dot += c * (xi[a] / kd);
            }
        }
        p[s] = I * dot;
    }
    let tperp = [u2[0] - p[0].norm_sqr(), u2[1] - p[1].norm_sqr()];
    // Gradients drop the Nyquist component, as the spectral gradient does.
    let g = lyapunov_gram(kd, kappa, beta, delta1);
    let x = [n[0], n[1], p[0], p[1]];
    let mut e = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            e += g[(a, b)] * (x[a].conj() * x[b]).re;
        }
    }
    e += tperp[0].max(0.0) * 0.5 / beta[1] + tperp[1].max(0.0) * 0.5 / beta[2];
    let s = (n[0].norm_sqr() + n[1].norm_sqr()) * (1.0 / kappa + kd * kd) + u2[0] + u2[1];
    let v = grid.volume();
    (e * v, s * v)
}

/// Dyadic Lyapunov functional `E_j` and the block norm `S_j`.
pub fn lyapunov_energy_and_norm(
    fields: &TwoFluidFields,
    bank: &DyadicBank,
    j: i32,
    coeffs: &ClosureCoefficients,
    kappa: f64,
    delta1: f64,
) -> Result<(f64, f64)> {
    if !coeffs.stable {
        return Err(SpectralError::NotStable);
    }
    let block = bank.block(j)?;
    let (e, s) = block
        .iter()
        .map(|&(i, w)| {
            let (e, s) = mode_energy(fields, i as usize, kappa, &coeffs.beta, delta1);
            (e * w * w, s * w * w)
        })
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok((e, s))
}

/// `E_j` of the fields.
pub fn lyapunov_energy(
    fields: &TwoFluidFields,
    bank: &DyadicBank,
    j: i32,
    coeffs: &ClosureCoefficients,
    kappa: f64,
    delta1: f64,
) -> Result<f64> {
    Ok(lyapunov_energy_and_norm(fields, bank, j, coeffs, kappa, delta1)?.0)
}

/// Largest real part over the spectrum of the full symbol at the given radii.
pub fn max_growth_rate(radii: &[f64], kappa: f64, coeffs: &ClosureCoefficients, d: usize) -> Result<(f64, f64)> {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &k in radii {
        let mut xi = vec![0.0; d];
        xi[0] = k;
        let m = assemble_full_symbol(&xi, kappa, coeffs)?;
        let ev = m
            .eigenvalues()
            .ok_or_else(|| SpectralError::InvalidArgument("eigensolver did not converge".into()))?;
        let top = ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        if top > best.0 {
            best = (top, k);
        }
    }
    Ok(best)
}
