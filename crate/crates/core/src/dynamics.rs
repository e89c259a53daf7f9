//! Pseudo-spectral exponential integration of the perturbed two-fluid system
//! and of the incompressible Navier-Stokes reference flow.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::besov::{self, BesovError, DyadicBank};
use crate::closure::{ClosureCoefficients, CompositeProfiles, ClosureError, ClosureModel, ROOT_SEPARATION_MIN};
use crate::field::{to_physical_many, to_spectral_many, GridField, Spectrum};
use crate::grid::Grid;
use crate::linalg::{matfun2, matfun_augmented, phi1_real, phi2_real};
use crate::spectral::{self, assemble_reduced_symbol, mode_generator, SpectralError, TwoFluidFields};

/// Norm above which a run is declared blown up.
pub const BLOWUP_NORM: f64 = 1e8;
/// Condition number of the decoupling transform above which the full 4×4
/// exponential is used instead.
pub const DECOUPLING_COND_MAX: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("fraction density left the working range at t = {t}: {source}")]
    PositivityBreach { t: f64, source: ClosureError },
    #[error("solution norm {norm:.3e} exceeded the blow-up threshold at t = {t}")]
    BlowUp { t: f64, norm: f64 },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Closure(#[from] ClosureError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Besov(#[from] BesovError),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Leray split `u = Pu + Qu` with `Qu = ξ(ξ·û)/|ξ|²`; the mean goes to `Pu`.
pub fn helmholtz_split(u: &GridField) -> (GridField, GridField) {
    let grid = u.grid().clone();
    let d = grid.dim();
    assert_eq!(u.components(), d, "helmholtz_split needs a vector field");
    let (p, q): (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) = {
        let per: Vec<([Complex64; 3], [Complex64; 3])> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let k = grid.derivative_wavevector(i);
                let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                let mut pu = [ZERO; 3];
                let mut qu = [ZERO; 3];
                if k2 == 0.0 {
                    for a in 0..d {
                        pu[a] = u.spectrum(a)[i];
                    }
                    return (pu, qu);
                }
                let dot = (0..d).fold(ZERO, |acc, a| acc + u.spectrum(a)[i] * k[a]);
                for a in 0..d {
                    qu[a] = dot * (k[a] / k2);
                    pu[a] = u.spectrum(a)[i] - qu[a];
                }
                (pu, qu)
            })
            .collect();
        (
            (0..d).map(|a| per.iter().map(|x| x.0[a]).collect()).collect(),
            (0..d).map(|a| per.iter().map(|x| x.1[a]).collect()).collect(),
        )
    };
    (
        GridField::from_spectra(&grid, p, u.is_real()),
        GridField::from_spectra(&grid, q, u.is_real()),
    )
}

/// Leray projection of a list of `d` spectra in place.
fn leray_in_place(grid: &Grid, comps: &mut [Spectrum]) {
    let d = grid.dim();
    let out: Vec<[Complex64; 3]> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let k = grid.derivative_wavevector(i);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            let mut v = [ZERO; 3];
            for a in 0..d {
                v[a] = comps[a][i];
            }
            if k2 > 0.0 {
                let dot = (0..d).fold(ZERO, |acc, a| acc + v[a] * k[a]);
                for a in 0..d {
                    v[a] -= dot * (k[a] / k2);
                }
            }
            v
        })
        .collect();
    for (a, c) in comps.iter_mut().enumerate().take(d) {
        for (i, x) in c.iter_mut().enumerate() {
            *x = out[i][a];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Etd1,
    Etdrk2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub dt: f64,
    /// Bound on `dt·max|u|/Δx` reported by diagnostics.
    pub cfl_safety: f64,
    /// Diagnostics are recorded every this many steps.
    pub snapshot_every: usize,
    /// Run the nonlinear terms; `false` gives the exactly integrated linear flow.
    pub nonlinear: bool,
    /// Steps between padded aliasing checks (0 disables them).
    pub alias_check_every: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Etdrk2,
            dt: 0.01,
            cfl_safety: 0.5,
            snapshot_every: 10,
            nonlinear: true,
            alias_check_every: 100,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.cfl_safety > 0.0) {
            return Err(DynamicsError::InvalidConfig("CFL safety factor must be positive".into()));
        }
        if self.snapshot_every == 0 {
            return Err(DynamicsError::InvalidConfig("snapshot cadence must be at least one step".into()));
        }
        Ok(())
    }
}

/// Per-mode exponential data of the linear operator over one step `h`.
#[derive(Debug, Clone)]
pub struct LinearPropagator {
    grid: Arc<Grid>,
    dt: f64,
    /// Unit wavevector per mode (zero for the mean and pure Nyquist modes).
    dirs: Vec<[f64; 3]>,
    /// `e^{Lh}`, `φ₁(Lh)`, `φ₂(Lh)` on `(n⁺, n⁻, p⁺, p⁻)`, row-major 4×4.
    compressible: Vec<[[f64; 16]; 3]>,
    /// The same three functions for the transverse rate `−k²`.
    transverse: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagatorPart {
    Exp,
    Phi1,
    Phi2,
}

impl PropagatorPart {
    fn index(self) -> usize {
        match self {
            PropagatorPart::Exp => 0,
            PropagatorPart::Phi1 => 1,
            PropagatorPart::Phi2 => 2,
        }
    }
}

fn to_rows(m: &Matrix4<f64>) -> [f64; 16] {
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[4 * r + c] = m[(r, c)];
        }
    }
    out
}

impl LinearPropagator {
    /// Builds the per-mode matrices. Each mode is split into the two
    /// decoupled 2×2 blocks when the roots are separated and the decoupling
    /// transform is well conditioned; otherwise the 4×4 generator is
    /// exponentiated directly.
    pub fn new(grid: &Arc<Grid>, kappa: f64, coeffs: &ClosureCoefficients, dt: f64) -> Self {
        let beta = coeffs.beta;
        let t = decoupling_transform(coeffs);
        let dirs: Vec<[f64; 3]> = (0..grid.len())
            .map(|i| {
                let k = grid.derivative_wavevector(i);
                let n = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
                if n == 0.0 {
                    [0.0; 3]
                } else {
                    [k[0] / n, k[1] / n, k[2] / n]
                }
            })
            .collect();
        let ks: Vec<f64> = (0..grid.len())
            .map(|i| {
                let k = grid.derivative_wavevector(i);
                (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt()
            })
            .collect();
        // Modes sharing |ξ| share their matrices.
        let mut uniq: Vec<f64> = ks.clone();
        uniq.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        uniq.dedup();
        let table: Vec<([[f64; 16]; 3], [f64; 3])> = uniq
            .par_iter()
            .map(|&k| mode_functions(k, kappa, &beta, coeffs, t.as_ref(), dt))
            .collect();
        let lookup = |k: f64| {
            let pos = uniq
                .binary_search_by(|x| x.partial_cmp(&k).expect("finite"))
                .expect("radius present");
            &table[pos]
        };
        let (compressible, transverse) = ks.iter().map(|&k| *lookup(k)).unzip();
        Self {
            grid: grid.clone(),
            dt,
            dirs,
            compressible,
            transverse,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `dst += alpha · F(Lh) src` for the selected function `F`, on the
    /// `2 + 2d` spectra `(n⁺, n⁻, u⁺, u⁻)`.
    pub fn apply(&self, part: PropagatorPart, src: &[Spectrum], alpha: f64, dst: &mut [Spectrum]) {
        let d = self.grid.dim();
        let idx = part.index();
        let out: Vec<[Complex64; 8]> = (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let e = self.dirs[i];
                let m = &self.compressible[i][idx];
                let st = self.transverse[i][idx];
                let mut up = [ZERO; 3];
                let mut um = [ZERO; 3];
                for a in 0..d {
                    up[a] = src[2 + a][i];
                    um[a] = src[2 + d + a][i];
                }
                let dp = (0..d).fold(ZERO, |acc, a| acc + up[a] * e[a]);
                let dm = (0..d).fold(ZERO, |acc, a| acc + um[a] * e[a]);
                let x = [src[0][i], src[1][i], I * dp, I * dm];
                let mut y = [ZERO; 4];
                for r in 0..4 {
                    y[r] = m[4 * r] * x[0] + m[4 * r + 1] * x[1] + m[4 * r + 2] * x[2] + m[4 * r + 3] * x[3];
                }
                let mut out = [ZERO; 8];
                out[0] = y[0];
                out[1] = y[1];
                for a in 0..d {
                    // Transverse part u − e(e·u), then the new longitudinal part −i e p.
                    let tp = up[a] - e[a] * dp;
                    let tm = um[a] - e[a] * dm;
                    out[2 + a] = st * tp - I * e[a] * y[2];
                    out[2 + d + a] = st * tm - I * e[a] * y[3];
                }
                out
            })
            .collect();
        for (c, dcomp) in dst.iter_mut().enumerate().take(2 + 2 * d) {
            dcomp
                .par_iter_mut()
                .zip(&out)
                .for_each(|(x, o)| *x += alpha * o[c]);
        }
    }
}

/// Rows `ℓ₊, ℓ₋` of the map `(n⁺, n⁻) ↦ (N₁⁺, N₂⁻)` and its inverse, when the
/// decoupling is usable.
fn decoupling_transform(coeffs: &ClosureCoefficients) -> Option<(nalgebra::Matrix2<f64>, nalgebra::Matrix2<f64>)> {
    if !((coeffs.r_plus - coeffs.r_minus).abs() >= ROOT_SEPARATION_MIN) || !coeffs.r_minus.is_finite() {
        return None;
    }
    let b = coeffs.beta;
    let t = nalgebra::Matrix2::new(b[2], coeffs.r_plus - b[0], b[2], coeffs.r_minus - b[0]);
    let inv = t.try_inverse()?;
    let cond = t.abs().max() * inv.abs().max() * 4.0;
    (cond <= DECOUPLING_COND_MAX).then_some((t, inv))
}

fn mode_functions(
    k: f64,
    kappa: f64,
    beta: &[f64; 4],
    coeffs: &ClosureCoefficients,
    t: Option<&(nalgebra::Matrix2<f64>, nalgebra::Matrix2<f64>)>,
    dt: f64,
) -> ([[f64; 16]; 3], [f64; 3]) {
    let zt = -k * k * dt;
    let transverse = [zt.exp(), phi1_real(zt), phi2_real(zt)];
    if k == 0.0 {
        let id = to_rows(&Matrix4::identity());
        let half = to_rows(&(Matrix4::identity() * 0.5));
        return ([id, id, half], transverse);
    }
    let funcs: [Matrix4<f64>; 3] = match t {
        Some((tm, tinv)) => {
            // Block-diagonal functions in (q₊, s₊, q₋, s₋), then conjugated
            // back to (n⁺, n⁻, p⁺, p⁻).
            let blocks = [coeffs.r_plus, coeffs.r_minus]
                .map(|r| matfun2(&(assemble_reduced_symbol(k, kappa, r) * dt)));
            let mut tbig = Matrix4::zeros();
            let mut tinv_big = Matrix4::zeros();
            for r in 0..2 {
                for c in 0..2 {
                    // Row 2r holds ℓ_r on n, row 2r+1 holds ℓ_r on p.
                    tbig[(2 * r, c)] = tm[(r, c)];
                    tbig[(2 * r + 1, 2 + c)] = tm[(r, c)];
                    tinv_big[(c, 2 * r)] = tinv[(c, r)];
                    tinv_big[(2 + c, 2 * r + 1)] = tinv[(c, r)];
                }
            }
            let mut out = [Matrix4::zeros(); 3];
            for (f, o) in out.iter_mut().enumerate() {
                let mut blk = Matrix4::zeros();
                for (b, fun) in blocks.iter().enumerate() {
                    for r in 0..2 {
                        for c in 0..2 {
                            blk[(2 * b + r, 2 * b + c)] = fun[f][(r, c)];
                        }
                    }
                }
                *o = tinv_big * blk * tbig;
            }
            out
        }
        None => {
            let l = mode_generator(k, kappa, beta) * dt;
            let dl = DMatrix::from_column_slice(4, 4, l.as_slice());
            let [e, p1, p2] = matfun_augmented(&dl);
            let conv = |m: DMatrix<f64>| Matrix4::from_column_slice(m.as_slice());
            [conv(e), conv(p1), conv(p2)]
        }
    };
    ([to_rows(&funcs[0]), to_rows(&funcs[1]), to_rows(&funcs[2])], transverse)
}

/// The sextuple `(n⁺, n⁻, u⁺, u⁻, v⁺, v⁻)` and the clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationState {
    pub t: f64,
    pub step: u64,
    pub kappa: f64,
    pub fields: TwoFluidFields,
    /// Incompressible reference velocities, when tracked.
    pub reference: Option<(GridField, GridField)>,
}

impl SimulationState {
    /// State at `t = 0`; with `reference` the NS fields start from `Pu±(0)`.
    pub fn new(kappa: f64, fields: TwoFluidFields, reference: bool) -> Self {
        let reference = reference.then(|| (helmholtz_split(&fields.u_plus).0, helmholtz_split(&fields.u_minus).0));
        Self {
            t: 0.0,
            step: 0,
            kappa,
            fields,
            reference,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.fields.grid()
    }

    /// Spatial means of `n⁺` and `n⁻`.
    pub fn density_means(&self) -> [f64; 2] {
        [self.fields.n_plus.mean(0).re, self.fields.n_minus.mean(0).re]
    }

    /// Spatial means of the fraction densities `R±`.
    pub fn mass_means(&self, closure: &ClosureModel) -> Result<[f64; 2]> {
        let grid = self.grid();
        let phys = to_physical_many(grid, &[self.fields.n_plus.spectrum(0), self.fields.n_minus.spectrum(0)]);
        let sk = self.kappa.sqrt();
        let mut out = [0.0; 2];
        for (s, n) in phys.iter().enumerate() {
            let r: std::result::Result<Vec<f64>, ClosureError> =
                n.par_iter().map(|&x| closure.fluctuation_inverse(x / sk)).collect();
            let r = r.map_err(|e| DynamicsError::PositivityBreach { t: self.t, source: e })?;
            out[s] = r.iter().sum::<f64>() / r.len() as f64;
        }
        Ok(out)
    }
}

/// Nonlinear right-hand side of the perturbed system.
#[derive(Debug, Clone)]
pub struct NonlinearTerms {
    grid: Arc<Grid>,
    closure: ClosureModel,
    beta: [f64; 4],
    mask: Vec<bool>,
}

struct PhasePhysical {
    n: Vec<f64>,
    grad_n: Vec<Vec<f64>>,
    lap_n: Vec<f64>,
    u: Vec<Vec<f64>>,
    /// `grad_u[a][b] = ∂_b u_a`.
    grad_u: Vec<Vec<Vec<f64>>>,
    /// `Δu + ∇div u`.
    visc: Vec<Vec<f64>>,
}

fn phase_physical(grid: &Grid, n: &[Complex64], u: &[&[Complex64]]) -> PhasePhysical {
    let d = grid.dim();
    let deriv = |s: &[Complex64], a: usize| -> Spectrum {
        s.par_iter()
            .enumerate()
            .map(|(i, &v)| I * grid.derivative_wavevector(i)[a] * v)
            .collect()
    };
    let lap = |s: &[Complex64]| -> Spectrum {
        s.par_iter()
            .enumerate()
            .map(|(i, &v)| {
                let k = grid.derivative_wavevector(i);
                -(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * v
            })
            .collect()
    };
    let mut spectra: Vec<Spectrum> = Vec::new();
    spectra.push(n.to_vec());
    for a in 0..d {
        spectra.push(deriv(n, a));
    }
    spectra.push(lap(n));
    for comp in u.iter().take(d) {
        spectra.push(comp.to_vec());
    }
    for comp in u.iter().take(d) {
        for b in 0..d {
            spectra.push(deriv(comp, b));
        }
    }
    // Δu_a + ∂_a div u.
    let div: Spectrum = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let k = grid.derivative_wavevector(i);
            (0..d).fold(ZERO, |acc, b| acc + I * k[b] * u[b][i])
        })
        .collect();
    for a in 0..d {
        let la = lap(u[a]);
        let ga = deriv(&div, a);
        spectra.push(la.iter().zip(&ga).map(|(x, y)| x + y).collect());
    }
    let refs: Vec<&[Complex64]> = spectra.iter().map(|s| s.as_slice()).collect();
    let mut phys = to_physical_many(grid, &refs).into_iter();
    let n = phys.next().expect("n");
    let grad_n = (0..d).map(|_| phys.next().expect("grad n")).collect();
    let lap_n = phys.next().expect("lap n");
    let u = (0..d).map(|_| phys.next().expect("u")).collect();
    let grad_u = (0..d)
        .map(|_| (0..d).map(|_| phys.next().expect("grad u")).collect())
        .collect();
    let visc = (0..d).map(|_| phys.next().expect("visc")).collect();
    PhasePhysical {
        n,
        grad_n,
        lap_n,
        u,
        grad_u,
        visc,
    }
}

impl NonlinearTerms {
    pub fn new(closure: &ClosureModel, grid: &Arc<Grid>) -> Result<Self> {
        Ok(Self {
            grid: grid.clone(),
            closure: closure.clone(),
            beta: closure.equilibrium_betas()?,
            mask: grid.dealias_mask(),
        })
    }

    /// Spectral increments `(Ṅ⁺, Ṅ⁻, U̇⁺, U̇⁻)` of the nonlinear terms,
    /// truncated by the 2/3 rule.
    pub fn evaluate(&self, spectra: &[Spectrum], kappa: f64, t: f64) -> Result<Vec<Spectrum>> {
        let mut out = self.evaluate_raw(spectra, kappa, t)?;
        for c in &mut out {
            for (x, &keep) in c.iter_mut().zip(&self.mask) {
                if !keep {
                    *x = ZERO;
                }
            }
        }
        Ok(out)
    }

    fn evaluate_raw(&self, spectra: &[Spectrum], kappa: f64, t: f64) -> Result<Vec<Spectrum>> {
        let grid = &self.grid;
        let d = grid.dim();
        let npts = grid.len();
        let sk = kappa.sqrt();
        let up: Vec<&[Complex64]> = (0..d).map(|a| spectra[2 + a].as_slice()).collect();
        let um: Vec<&[Complex64]> = (0..d).map(|a| spectra[2 + d + a].as_slice()).collect();
        let ph = [
            phase_physical(grid, &spectra[0], &up),
            phase_physical(grid, &spectra[1], &um),
        ];
        let nsym = d * (d + 1) / 2;
        // Per phase: transport (1), vector part (d), stress (nsym), gradient
        // potential (1), viscous prefactor 1 + Q (1).
        let per_phase = 1 + d + nsym + 2;
        let stride = 2 * per_phase;
        let mut buf = vec![0.0; npts * stride];
        let closure = &self.closure;
        let beta = &self.beta;
        buf.par_chunks_mut(stride)
            .enumerate()
            .try_for_each(|(i, chunk)| -> std::result::Result<(), ClosureError> {
                let rp = closure.fluctuation_inverse(ph[0].n[i] / sk)?;
                let rm = closure.fluctuation_inverse(ph[1].n[i] / sk)?;
                let g = closure.g_coefficients_with(beta, rp, rm)?;
                for (s, (p, r)) in ph.iter().zip([rp, rm]).enumerate() {
                    let comp = CompositeProfiles::at_density(&closure.profile, r);
                    let o = &mut chunk[s * per_phase..(s + 1) * per_phase];
                    let div: f64 = (0..d).map(|a| p.grad_u[a][a][i]).sum();
                    let adv_n: f64 = (0..d).map(|a| p.u[a][i] * p.grad_n[a][i]).sum();
                    o[0] = -sk * comp.psi * div - adv_n;
                    let (ga, gb) = if s == 0 { (g[0], g[1]) } else { (g[2], g[3]) };
                    for a in 0..d {
                        let adv: f64 = (0..d).map(|b| p.u[b][i] * p.grad_u[a][b][i]).sum();
                        o[1 + a] = -adv + comp.q * p.visc[a][i]
                            - (ga * ph[0].grad_n[a][i] + gb * ph[1].grad_n[a][i]) / sk;
                    }
                    let mut c = 1 + d;
                    for a in 0..d {
                        for b in a..d {
                            o[c] = comp.phi * (p.grad_u[a][b][i] + p.grad_u[b][a][i]);
                            c += 1;
                        }
                    }
                    let gn2: f64 = (0..d).map(|a| p.grad_n[a][i] * p.grad_n[a][i]).sum();
                    o[c] = 0.5 * gn2 + sk * comp.psi * p.lap_n[i];
                    o[c + 1] = 1.0 + comp.q;
                }
                Ok(())
            })
            .map_err(|e| DynamicsError::PositivityBreach { t, source: e })?;
        let column = |c: usize| -> Vec<f64> { buf.par_chunks(stride).map(|ch| ch[c]).collect() };
        let mut result: Vec<Spectrum> = vec![Vec::new(); 2 + 2 * d];
        for s in 0..2 {
            let base = s * per_phase;
            let cols: Vec<Vec<f64>> = (0..per_phase - 1).map(|c| column(base + c)).collect();
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            let spec = to_spectral_many(grid, &refs);
            // div of the symmetric stress, back to physical, times (1 + Q).
            let stress_index = |a: usize, b: usize| {
                let (a, b) = if a <= b { (a, b) } else { (b, a) };
                1 + d + (0..a).map(|r| d - r).sum::<usize>() + (b - a)
            };
            let div_s: Vec<Spectrum> = (0..d)
                .map(|a| {
                    (0..npts)
                        .into_par_iter()
                        .map(|i| {
                            let k = grid.derivative_wavevector(i);
                            (0..d).fold(ZERO, |acc, b| acc + I * k[b] * spec[stress_index(a, b)][i])
                        })
                        .collect()
                })
                .collect();
            let div_refs: Vec<&[Complex64]> = div_s.iter().map(|x| x.as_slice()).collect();
            let div_phys = to_physical_many(grid, &div_refs);
            let pref = column(base + per_phase - 1);
            let weighted: Vec<Vec<f64>> = div_phys
                .iter()
                .map(|c| c.iter().zip(&pref).map(|(x, w)| x * w).collect())
                .collect();
            let wrefs: Vec<&[f64]> = weighted.iter().map(|c| c.as_slice()).collect();
            let wspec = to_spectral_many(grid, &wrefs);
            let potential = &spec[1 + d + nsym];
            result[s] = spec[0].clone();
            for a in 0..d {
                result[2 + s * d + a] = (0..npts)
                    .into_par_iter()
                    .map(|i| {
                        let k = grid.derivative_wavevector(i)[a];
                        spec[1 + a][i] + wspec[a][i] + I * k * potential[i]
                    })
                    .collect();
            }
        }
        Ok(result)
    }

    /// Relative difference between the nonlinear terms evaluated on this
    /// grid and on a grid refined by two, restricted to the kept modes.
    pub fn aliasing_residual(&self, spectra: &[Spectrum], kappa: f64, t: f64) -> Result<f64> {
        let grid = &self.grid;
        let fine = Grid::new(grid.dim(), 2 * grid.points(), grid.lambda()).expect("refined grid");
        let pad = |s: &Spectrum| -> Spectrum {
            let mut out = vec![ZERO; fine.len()];
            for (i, &v) in s.iter().enumerate() {
                if v != ZERO {
                    let idx = grid.unflatten(i);
                    let mut f = [0usize; 3];
                    for a in 0..grid.dim() {
                        let si = grid.signed_index(idx[a]);
                        f[a] = si.rem_euclid(fine.points() as i64) as usize;
                    }
                    out[fine.flatten(&f[..grid.dim()])] = v;
                }
            }
            out
        };
        let padded: Vec<Spectrum> = spectra.iter().map(pad).collect();
        let fine_terms = NonlinearTerms::new(&self.closure, &fine)?.evaluate_raw(&padded, kappa, t)?;
        let coarse = self.evaluate(spectra, kappa, t)?;
        let (mut diff, mut norm) = (0.0, 0.0);
        for (c, f) in coarse.iter().zip(&fine_terms) {
            for (i, &v) in c.iter().enumerate() {
                if !self.mask[i] {
                    continue;
                }
                let idx = grid.unflatten(i);
                let mut fi = [0usize; 3];
                for a in 0..grid.dim() {
                    fi[a] = grid.signed_index(idx[a]).rem_euclid(fine.points() as i64) as usize;
                }
                let w = f[fine.flatten(&fi[..grid.dim()])];
                diff += (v - w).norm_sqr();
                norm += w.norm_sqr();
            }
        }
        Ok(if norm == 0.0 { 0.0 } else { (diff / norm).sqrt() })
    }
}

/// Exponential integrator for the two-fluid system plus the NS reference.
#[derive(Debug, Clone)]
pub struct Integrator {
    grid: Arc<Grid>,
    kappa: f64,
    config: IntegratorConfig,
    prop: LinearPropagator,
    ns: Vec<[f64; 3]>,
    terms: Option<NonlinearTerms>,
    mask: Vec<bool>,
}

impl Integrator {
    pub fn new(grid: &Arc<Grid>, closure: &ClosureModel, kappa: f64, config: &IntegratorConfig) -> Result<Self> {
        config.validate()?;
        if !(kappa > 0.0) {
            return Err(DynamicsError::InvalidConfig(format!("kappa must be positive, got {kappa}")));
        }
        let betas = closure.equilibrium_betas()?;
        let coeffs = match ClosureCoefficients::from_betas(betas) {
            Ok(mut c) => {
                let rep = closure.stability_margin()?;
                c.stable = rep.stable;
                c.stability_margin = rep.margin;
                c
            }
            // Complex roots: the propagator falls back to the full generator.
            Err(_) => ClosureCoefficients {
                beta: betas,
                r_plus: f64::NAN,
                r_minus: f64::NAN,
                stability_margin: f64::NAN,
                stable: false,
            },
        };
        Self::with_coefficients(grid, closure, &coeffs, kappa, config)
    }

    pub fn with_coefficients(
        grid: &Arc<Grid>,
        closure: &ClosureModel,
        coeffs: &ClosureCoefficients,
        kappa: f64,
        config: &IntegratorConfig,
    ) -> Result<Self> {
        config.validate()?;
        let dt = config.dt;
        let ns = (0..grid.len())
            .map(|i| {
                let k = grid.derivative_wavevector(i);
                let z = -(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * dt;
                [z.exp(), phi1_real(z), phi2_real(z)]
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            kappa,
            config: config.clone(),
            prop: LinearPropagator::new(grid, kappa, coeffs, dt),
            ns,
            terms: if config.nonlinear {
                Some(NonlinearTerms::new(closure, grid)?)
            } else {
                None
            },
            mask: grid.dealias_mask(),
        })
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.config
    }

    pub fn propagator(&self) -> &LinearPropagator {
        &self.prop
    }

    fn rhs(&self, spectra: &[Spectrum], t: f64) -> Result<Option<Vec<Spectrum>>> {
        match &self.terms {
            None => Ok(None),
            Some(terms) => terms.evaluate(spectra, self.kappa, t).map(Some),
        }
    }

    fn dealias(&self, spectra: &mut [Spectrum]) {
        for c in spectra {
            for (x, &keep) in c.iter_mut().zip(&self.mask) {
                if !keep {
                    *x = ZERO;
                }
            }
        }
    }

    /// One step of the configured scheme.
    pub fn step(&self, state: &SimulationState) -> Result<SimulationState> {
        let h = self.config.dt;
        let d = self.grid.dim();
        let w: Vec<Spectrum> = state.fields.clone().into_spectra();
        let zeros = || vec![vec![ZERO; self.grid.len()]; 2 + 2 * d];
        let mut next = zeros();
        self.prop.apply(PropagatorPart::Exp, &w, 1.0, &mut next);
        if let Some(nw) = self.rhs(&w, state.t)? {
            self.prop.apply(PropagatorPart::Phi1, &nw, h, &mut next);
            if self.config.scheme == Scheme::Etdrk2 {
                let na = self
                    .rhs(&next, state.t + h)?
                    .expect("nonlinear terms enabled");
                let diff: Vec<Spectrum> = na
                    .iter()
                    .zip(&nw)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                    .collect();
                self.prop.apply(PropagatorPart::Phi2, &diff, h, &mut next);
            }
            self.dealias(&mut next);
        }
        let fields = TwoFluidFields::from_spectra(&self.grid, next, state.fields.is_real());
        let norm = fields.l2_squared().sqrt();
        if !(norm <= BLOWUP_NORM) {
            return Err(DynamicsError::BlowUp { t: state.t + h, norm });
        }
        let reference = match &state.reference {
            None => None,
            Some((vp, vm)) => Some((self.ns_reference_step(vp, state.t)?, self.ns_reference_step(vm, state.t)?)),
        };
        Ok(SimulationState {
            t: state.t + h,
            step: state.step + 1,
            kappa: state.kappa,
            fields,
            reference,
        })
    }

    fn ns_rhs(&self, v: &[Spectrum]) -> Vec<Spectrum> {
        let grid = &self.grid;
        let d = grid.dim();
        let mut spectra: Vec<Spectrum> = v.to_vec();
        for comp in v.iter().take(d) {
            for b in 0..d {
                spectra.push(
                    comp.par_iter()
                        .enumerate()
                        .map(|(i, &x)| I * grid.derivative_wavevector(i)[b] * x)
                        .collect(),
                );
            }
        }
        let refs: Vec<&[Complex64]> = spectra.iter().map(|s| s.as_slice()).collect();
        let phys = to_physical_many(grid, &refs);
        let adv: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                (0..grid.len())
                    .into_par_iter()
                    .map(|i| -(0..d).map(|b| phys[b][i] * phys[d + a * d + b][i]).sum::<f64>())
                    .collect()
            })
            .collect();
        let arefs: Vec<&[f64]> = adv.iter().map(|c| c.as_slice()).collect();
        let mut out = to_spectral_many(grid, &arefs);
        leray_in_place(grid, &mut out);
        self.dealias(&mut out);
        out
    }

    /// One exponential step of `∂_t v + P(v·∇v) − Δv = 0`.
    pub fn ns_reference_step(&self, v: &GridField, t: f64) -> Result<GridField> {
        let h = self.config.dt;
        let w: Vec<Spectrum> = v.spectra().to_vec();
        let lin = |s: &[Spectrum], part: usize, alpha: f64, dst: &mut [Spectrum]| {
            for (c, d) in s.iter().zip(dst.iter_mut()) {
                d.par_iter_mut()
                    .zip(c)
                    .zip(&self.ns)
                    .for_each(|((x, y), m)| *x += alpha * m[part] * y);
            }
        };
        let mut next = vec![vec![ZERO; self.grid.len()]; w.len()];
        lin(&w, 0, 1.0, &mut next);
        if self.config.nonlinear {
            let nw = self.ns_rhs(&w);
            lin(&nw, 1, h, &mut next);
            if self.config.scheme == Scheme::Etdrk2 {
                let na = self.ns_rhs(&next);
                let diff: Vec<Spectrum> = na
                    .iter()
                    .zip(&nw)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                    .collect();
                lin(&diff, 2, h, &mut next);
            }
            self.dealias(&mut next);
        }
        let out = GridField::from_spectra(&self.grid, next, v.is_real());
        let norm = out.l2_norm();
        if !(norm <= BLOWUP_NORM) {
            return Err(DynamicsError::BlowUp { t: t + h, norm });
        }
        Ok(out)
    }

    /// Relative aliasing indicator of the nonlinear terms at a state.
    pub fn aliasing_residual(&self, state: &SimulationState) -> Result<f64> {
        match &self.terms {
            None => Ok(0.0),
            Some(terms) => {
                let w = state.fields.clone().into_spectra();
                terms.aliasing_residual(&w, self.kappa, state.t)
            }
        }
    }
}

/// Observables recorded along a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSpec {
    /// Record Besov norms of `(κ^{-1/2}n, ∇n, u)` in `Ḃ^{d/2−1}_{2,1}`.
    pub energy: bool,
    /// Exponent `p` of the dispersive norm `‖(κ^{-1/2}n, ∇n, Qu)‖_{Ḃ^{d/p}_{p,1}}`.
    pub dispersive_p: Option<f64>,
    /// Record `‖Pu − v‖` in `Ḃ^{d/2−1}_{2,1}` and `Ḃ^{d/2+1}_{2,1}`.
    pub reference_error: bool,
    /// Multi-indices `α` for `‖D^α(κ^{-1/2}n, ∇n, u)‖_{L²}`.
    pub derivatives: Vec<Vec<u32>>,
    /// Cross-term weight of the Lyapunov energies; `None` skips them.
    pub lyapunov_delta1: Option<f64>,
    /// Record spatial means of `n±` and `R±`.
    pub means: bool,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            energy: true,
            dispersive_p: None,
            reference_error: false,
            derivatives: Vec::new(),
            lyapunov_delta1: None,
            means: true,
        }
    }
}

/// One row of diagnostics; `values` keeps a fixed column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub t: f64,
    pub step: u64,
    pub values: Vec<(String, f64)>,
}

impl DiagnosticRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// `(κ^{-1/2}n⁺, κ^{-1/2}n⁻, ∇n⁺, ∇n⁻, u⁺, u⁻)` as one vector field.
pub fn energy_vector(state: &SimulationState, compressible_only: bool) -> GridField {
    let f = &state.fields;
    let s = 1.0 / state.kappa.sqrt();
    let np = f.n_plus.scale(s);
    let nm = f.n_minus.scale(s);
    let gp = f.n_plus.gradient();
    let gm = f.n_minus.gradient();
    let (up, um) = if compressible_only {
        (helmholtz_split(&f.u_plus).1, helmholtz_split(&f.u_minus).1)
    } else {
        (f.u_plus.clone(), f.u_minus.clone())
    };
    GridField::stack(&[&np, &nm, &gp, &gm, &up, &um])
}

/// Evaluates the requested observables at a state.
pub fn record_diagnostics(
    state: &SimulationState,
    closure: &ClosureModel,
    coeffs: Option<&ClosureCoefficients>,
    bank: &DyadicBank,
    spec: &DiagnosticsSpec,
    dt: f64,
) -> Result<DiagnosticRecord> {
    let grid = state.grid();
    let d = grid.dim() as f64;
    let mut values: Vec<(String, f64)> = Vec::new();
    let w = energy_vector(state, false);
    if spec.energy {
        let norms = besov::block_norms(bank, &w, 2.0);
        values.push(("energy_besov".into(), besov::combine_blocks(bank, &norms, d / 2.0 - 1.0, 1.0)));
        values.push(("energy_l2".into(), w.l2_norm()));
        values.push(("uncovered".into(), bank.uncovered_fraction(&w)));
    }
    if let Some(p) = spec.dispersive_p {
        let q = energy_vector(state, true);
        let norms = besov::block_norms(bank, &q, p);
        values.push(("dispersive_besov".into(), besov::combine_blocks(bank, &norms, d / p, 1.0)));
    }
    if spec.reference_error {
        if let Some((vp, vm)) = &state.reference {
            let ep = helmholtz_split(&state.fields.u_plus).0.sub(vp);
            let em = helmholtz_split(&state.fields.u_minus).0.sub(vm);
            let e = GridField::stack(&[&ep, &em]);
            let norms = besov::block_norms(bank, &e, 2.0);
            values.push(("ref_error_low".into(), besov::combine_blocks(bank, &norms, d / 2.0 - 1.0, 1.0)));
            values.push(("ref_error_high".into(), besov::combine_blocks(bank, &norms, d / 2.0 + 1.0, 1.0)));
        }
    }
    for alpha in &spec.derivatives {
        let name = format!("d_{}", alpha.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(""));
        values.push((name, w.partial(alpha).l2_norm()));
    }
    if let (Some(delta1), Some(coeffs)) = (spec.lyapunov_delta1, coeffs) {
        let mut total = 0.0;
        for j in bank.range() {
            let e = spectral::lyapunov_energy(&state.fields, bank, j, coeffs, state.kappa, delta1)?;
            values.push((format!("lyapunov_{j}"), e));
            total += e;
        }
        values.push(("lyapunov_total".into(), total));
    }
    if spec.means {
        let [a, b] = state.density_means();
        values.push(("mean_n_plus".into(), a));
        values.push(("mean_n_minus".into(), b));
        let [ra, rb] = state.mass_means(closure)?;
        values.push(("mass_plus".into(), ra));
        values.push(("mass_minus".into(), rb));
    }
    let umax = [&state.fields.u_plus, &state.fields.u_minus]
        .iter()
        .map(|u| besov::lebesgue_norm(u, f64::INFINITY))
        .fold(0.0, f64::max);
    values.push(("cfl".into(), dt * umax / grid.spacing()));
    Ok(DiagnosticRecord {
        t: state.t,
        step: state.step,
        values,
    })
}

/// Result of a run: recorded diagnostics, the last good state and the
/// failure that stopped the run, if any.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<DiagnosticRecord>,
    pub last: SimulationState,
    pub failure: Option<DynamicsError>,
}

/// Advances `initial` to `horizon`, recording diagnostics every
/// `snapshot_every` steps (and at the start). `on_step` sees every state.
pub fn run_simulation<F>(
    initial: SimulationState,
    closure: &ClosureModel,
    integrator: &Integrator,
    horizon: f64,
    spec: &DiagnosticsSpec,
    bank: &DyadicBank,
    mut on_step: F,
) -> RunOutcome
where
    F: FnMut(&SimulationState),
{
    let coeffs = closure.equilibrium_coefficients().ok();
    let cfg = integrator.config().clone();
    let mut records = Vec::new();
    let mut state = initial;
    let record = |s: &SimulationState, out: &mut Vec<DiagnosticRecord>| -> Result<()> {
        let mut r = record_diagnostics(s, closure, coeffs.as_ref(), bank, spec, cfg.dt)?;
        if cfg.alias_check_every > 0 && cfg.nonlinear && s.step.is_multiple_of(cfg.alias_check_every as u64) {
            r.values.push(("aliasing".into(), integrator.aliasing_residual(s)?));
        }
        out.push(r);
        Ok(())
    };
    if state.step.is_multiple_of(cfg.snapshot_every as u64) {
        if let Err(e) = record(&state, &mut records) {
            return RunOutcome { records, last: state, failure: Some(e) };
        }
    }
    let total = (horizon / cfg.dt - 1e-9).ceil().max(0.0) as u64;
    while state.step < total {
        match integrator.step(&state) {
            Ok(next) => state = next,
            Err(e) => return RunOutcome { records, last: state, failure: Some(e) },
        }
        on_step(&state);
        if state.step.is_multiple_of(cfg.snapshot_every as u64) || state.step == total {
            if let Err(e) = record(&state, &mut records) {
                return RunOutcome { records, last: state, failure: Some(e) };
            }
        }
    }
    RunOutcome { records, last: state, failure: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::{CapillarityProfile, PressureLaw};

    fn model(fprime: f64) -> ClosureModel {
        ClosureModel::new(
            PressureLaw::gamma(1.0, 1.0),
            PressureLaw::gamma(1.0, 1.0),
            fprime,
            CapillarityProfile::constant(),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn helmholtz_projectors() {
        let grid = Grid::new(2, 16, 1.0).unwrap();
        let u = crate::besov::random_besov_field(&grid, 3, 0.0, 2).unwrap();
        let (p, q) = helmholtz_split(&u);
        assert!(p.divergence().l2_norm() < 1e-12 * u.l2_norm());
        let curl = q.component(0).gradient().component(1).sub(&q.component(1).gradient().component(0));
        assert!(curl.l2_norm() < 1e-12 * u.l2_norm());
        let sum = p.add(&q).sub(&u);
        assert!(sum.l2_norm() < 1e-14 * u.l2_norm());
        let (pp, pq) = helmholtz_split(&p);
        assert!(pq.l2_norm() < 1e-13 * u.l2_norm());
        assert!(pp.sub(&p).l2_norm() < 1e-13 * u.l2_norm());
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let grid = Grid::new(2, 16, 2.0).unwrap();
        let m = model(-1.0);
        let integ = Integrator::new(&grid, &m, 16.0, &IntegratorConfig::default()).unwrap();
        let s0 = SimulationState::new(16.0, TwoFluidFields::zeros(&grid), true);
        let s1 = integ.step(&s0).unwrap();
        assert_eq!(s1.fields.l2_squared(), 0.0);
        assert_eq!(s1.t, 0.01);
    }

    #[test]
    fn shear_flow_reference_solution() {
        let grid = Grid::new(2, 16, 1.0).unwrap();
        let m = model(-1.0);
        let cfg = IntegratorConfig { dt: 0.05, ..Default::default() };
        let integ = Integrator::new(&grid, &m, 4.0, &cfg).unwrap();
        let v0 = GridField::from_fn(&grid, 2, |c, x| if c == 0 { x[1].sin() } else { 0.0 });
        let mut v = v0.clone();
        for s in 0..20 {
            v = integ.ns_reference_step(&v, s as f64 * 0.05).unwrap();
        }
        let exact = v0.scale((-1.0f64).exp());
        assert!(v.sub(&exact).l2_norm() < 1e-10 * exact.l2_norm());
    }

    #[test]
    fn constant_profile_transport_term() {
        // With m ≡ 1 the density increment is −u·∇n − (1/2) n div u.
        let grid = Grid::new(2, 32, 1.0).unwrap();
        let m = model(-1.0);
        let kappa = 25.0;
        let n = GridField::from_fn(&grid, 1, |_, x| 0.3 * x[0].sin() * x[1].cos());
        let u = GridField::from_fn(&grid, 2, |c, x| if c == 0 { 0.2 * x[1].sin() } else { 0.1 * (x[0] + x[1]).cos() });
        let fields = TwoFluidFields {
            n_plus: n.clone(),
            n_minus: n.scale(0.5),
            u_plus: u.clone(),
            u_minus: u.scale(-1.0),
        };
        let terms = NonlinearTerms::new(&m, &grid).unwrap();
        let out = terms.evaluate_raw(&fields.clone().into_spectra(), kappa, 0.0).unwrap();
        let got = crate::field::to_physical_real(&grid, &out[0]);
        let np = n.physical()[0].clone();
        let gn = n.gradient().physical();
        let up = u.physical();
        let div = u.divergence().physical()[0].clone();
        for i in 0..grid.len() {
            let want = -(up[0][i] * gn[0][i] + up[1][i] * gn[1][i]) - 0.5 * np[i] * div[i];
            assert!((got[i] - want).abs() < 1e-12, "{} vs {}", got[i], want);
        }
    }
}
