//! Littlewood-Paley decomposition and homogeneous Besov norms on the torus.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::GridField;
use crate::grid::{Grid, GridError};

/// Inner radius of the annulus carrying `φ`.
pub const ANNULUS_INNER: f64 = 3.0 / 4.0;
/// Outer radius of the annulus carrying `φ`.
pub const ANNULUS_OUTER: f64 = 8.0 / 3.0;
/// Fraction of spectral energy allowed outside the covered band.
pub const BAND_LEAK_MAX: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BesovError {
    #[error("block {j_max} reaches radius {reach} beyond the Nyquist frequency {nyquist}")]
    NyquistViolation { j_max: i32, reach: f64, nyquist: f64 },
    #[error("dyadic range [{j_min}, {j_max}] must span at least three blocks")]
    InvalidRange { j_min: i32, j_max: i32 },
    #[error("block index {j} outside the bank range [{j_min}, {j_max}]")]
    OutOfBank { j: i32, j_min: i32, j_max: i32 },
    #[error("{fraction:.3e} of the spectral energy lies outside the covered annuli")]
    BandTooNarrow { fraction: f64 },
    #[error("dyadic block {j} of the field is identically zero")]
    ZeroBlock { j: i32 },
    #[error("regularity index {sigma} outside [-d/2, d/2 + 1]")]
    InvalidSigma { sigma: f64 },
    #[error("exponents must satisfy 1 <= p <= q <= inf (p = {p}, q = {q})")]
    InvalidExponent { p: f64, q: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("field container: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for BesovError {
    fn from(e: std::io::Error) -> Self {
        BesovError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BesovError>;

fn glue(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth radial cutoff: 1 on `|ξ| ≤ 3/4`, 0 on `|ξ| ≥ 4/3`.
pub fn chi(r: f64) -> f64 {
    let a = glue(4.0 / 3.0 - r);
    let b = glue(r - 3.0 / 4.0);
    if b == 0.0 {
        1.0
    } else {
        a / (a + b)
    }
}

/// Annulus multiplier `φ(ξ) = χ(ξ/2) − χ(ξ)`.
pub fn phi(r: f64) -> f64 {
    chi(0.5 * r) - chi(r)
}

/// Dyadic multipliers `φ(2^{-j}ξ)` sampled on a grid's lattice.
///
/// Each block is stored sparsely as the lattice points where it is nonzero.
#[derive(Debug, Clone)]
pub struct DyadicBank {
    grid: Arc<Grid>,
    j_min: i32,
    j_max: i32,
    blocks: Vec<Vec<(u32, f64)>>,
}

impl DyadicBank {
    pub fn new(grid: &Arc<Grid>, j_min: i32, j_max: i32) -> Result<Self> {
        if j_max - j_min < 2 {
            return Err(BesovError::InvalidRange { j_min, j_max });
        }
        let reach = 2f64.powi(j_max) * ANNULUS_OUTER;
        if !(reach < grid.nyquist()) {
            return Err(BesovError::NyquistViolation {
                j_max,
                reach,
                nyquist: grid.nyquist(),
            });
        }
        let k = grid.wavenumbers();
        let blocks = (j_min..=j_max)
            .into_par_iter()
            .map(|j| {
                let scale = 2f64.powi(-j);
                k.iter()
                    .enumerate()
                    .filter_map(|(i, &kk)| {
                        let w = phi(kk * scale);
                        (w > 0.0).then_some((i as u32, w))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            j_min,
            j_max,
            blocks,
        })
    }

    /// Bank with the default range: the lowest block still covers the first
    /// lattice shell `1/Λ`, the highest is the last one below Nyquist.
    pub fn with_defaults(grid: &Arc<Grid>) -> Result<Self> {
        let (lo, hi) = default_range(grid);
        Self::new(grid, lo, hi)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn range(&self) -> std::ops::RangeInclusive<i32> {
        self.j_min..=self.j_max
    }

    /// Radii between which the blocks sum to one exactly.
    pub fn exact_band(&self) -> (f64, f64) {
        (
            2f64.powi(self.j_min) * 4.0 / 3.0,
            2f64.powi(self.j_max) * 3.0 / 2.0,
        )
    }

    fn check(&self, j: i32) -> Result<usize> {
        if j < self.j_min || j > self.j_max {
            return Err(BesovError::OutOfBank {
                j,
                j_min: self.j_min,
                j_max: self.j_max,
            });
        }
        Ok((j - self.j_min) as usize)
    }

    /// Sparse multiplier of block `j`.
    pub fn block(&self, j: i32) -> Result<&[(u32, f64)]> {
        Ok(&self.blocks[self.check(j)?])
    }

    /// Dense multiplier `φ(2^{-j}ξ)`.
    pub fn block_dense(&self, j: i32) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.grid.len()];
        for &(i, w) in self.block(j)? {
            out[i as usize] = w;
        }
        Ok(out)
    }

    /// `Σ_j φ(2^{-j}ξ)` at every lattice point.
    pub fn partition_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for b in &self.blocks {
            for &(i, w) in b {
                out[i as usize] += w;
            }
        }
        out
    }

    /// Fraction of the non-mean spectral energy of `field` that the bank
    /// leaves unrepresented, weighting each mode by `1 − Σ_j φ_j`.
    pub fn uncovered_fraction(&self, field: &GridField) -> f64 {
        let cover = self.partition_sum();
        let (mut total, mut missed) = (0.0, 0.0);
        for s in field.spectra() {
            for (i, c) in s.iter().enumerate().skip(1) {
                let e = c.norm_sqr();
                total += e;
                missed += e * (1.0 - cover[i]).max(0.0);
            }
        }
        if total == 0.0 {
            0.0
        } else {
            missed / total
        }
    }
}

/// Default `(j_min, j_max)` for a grid.
pub fn default_range(grid: &Grid) -> (i32, i32) {
    // Smallest j with 2^j·4/3 below the first shell 1/Λ.
    let mut lo = (-grid.lambda().log2()).floor() as i32 + 1;
    while 2f64.powi(lo) * 4.0 / 3.0 >= 1.0 / grid.lambda() {
        lo -= 1;
    }
    let mut hi = lo;
    while 2f64.powi(hi + 1) * ANNULUS_OUTER < grid.nyquist() {
        hi += 1;
    }
    (lo, hi)
}

/// `Δ̇_j u`.
pub fn dyadic_block(bank: &DyadicBank, field: &GridField, j: i32) -> Result<GridField> {
    let block = bank.block(j)?;
    let comps = field
        .spectra()
        .iter()
        .map(|s| {
            let mut out = vec![Complex64::new(0.0, 0.0); s.len()];
            for &(i, w) in block {
                out[i as usize] = s[i as usize] * w;
            }
            out
        })
        .collect();
    Ok(GridField::from_spectra(bank.grid(), comps, field.is_real()))
}

/// `Ṡ_j u`, multiplication by `χ(2^{-j}ξ)`; the mean mode passes unchanged.
pub fn low_cutoff(bank: &DyadicBank, field: &GridField, j: i32) -> Result<GridField> {
    bank.check(j)?;
    let grid = bank.grid().clone();
    let scale = 2f64.powi(-j);
    Ok(field.map_spectral(|i, v| v * chi(grid.wavenumber(i) * scale)))
}

/// `‖u‖_{L^p}` by the rectangle rule over the periodic box; vector fields use
/// the pointwise Euclidean norm. `p = ∞` gives the sample maximum.
pub fn lebesgue_norm(field: &GridField, p: f64) -> f64 {
    let grid = field.grid();
    let modulus: Vec<f64> = if field.is_real() {
        let phys = field.physical();
        (0..grid.len())
            .into_par_iter()
            .map(|i| phys.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
            .collect()
    } else {
        let phys = field.physical_complex();
        (0..grid.len())
            .into_par_iter()
            .map(|i| phys.iter().map(|c| c[i].norm_sqr()).sum::<f64>().sqrt())
            .collect()
    };
    lebesgue_norm_samples(&modulus, grid.cell_volume(), p)
}

/// `(Σ|u|^p Δx^d)^{1/p}` with a schedule-independent summation order.
pub fn lebesgue_norm_samples(samples: &[f64], cell: f64, p: f64) -> f64 {
    if p.is_infinite() {
        return samples.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    let partial: Vec<f64> = samples
        .par_chunks(4096)
        .map(|c| c.iter().map(|x| x.abs().powf(p)).sum::<f64>())
        .collect();
    (partial.iter().sum::<f64>() * cell).powf(1.0 / p)
}

/// `‖Δ̇_j u‖_{L^p}` for every block of the bank; `p = 2` uses Parseval.
pub fn block_norms(bank: &DyadicBank, field: &GridField, p: f64) -> Vec<f64> {
    let grid = bank.grid();
    bank.range()
        .map(|j| {
            let block = bank.block(j).expect("j in range");
            if p == 2.0 {
                let e: f64 = field
                    .spectra()
                    .iter()
                    .map(|s| {
                        block
                            .iter()
                            .map(|&(i, w)| (s[i as usize] * w).norm_sqr())
                            .sum::<f64>()
                    })
                    .sum();
                (e * grid.volume()).sqrt()
            } else {
                let b = dyadic_block(bank, field, j).expect("j in range");
                lebesgue_norm(&b, p)
            }
        })
        .collect()
}

/// `ℓ^r` combination of `2^{js}·norms[j]`.
pub fn combine_blocks(bank: &DyadicBank, norms: &[f64], s: f64, r: f64) -> f64 {
    let weighted = bank
        .range()
        .zip(norms)
        .map(|(j, &x)| 2f64.powf(j as f64 * s) * x);
    if r.is_infinite() {
        weighted.fold(0.0, f64::max)
    } else {
        weighted.map(|x| x.powf(r)).sum::<f64>().powf(1.0 / r)
    }
}

/// Homogeneous Besov norm `‖u‖_{Ḃ^s_{p,r}}` over the bank's blocks.
/// The mean mode is excluded.
pub fn besov_norm(bank: &DyadicBank, field: &GridField, s: f64, p: f64, r: f64) -> Result<f64> {
    let leak = bank.uncovered_fraction(field);
    if leak > BAND_LEAK_MAX {
        return Err(BesovError::BandTooNarrow { fraction: leak });
    }
    Ok(combine_blocks(bank, &block_norms(bank, field, p), s, r))
}

/// Distinct multi-indices of order `k` in `d` variables with their
/// multinomial multiplicities.
fn multi_indices(d: usize, k: u32) -> Vec<(Vec<u32>, f64)> {
    fn rec(d: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == d - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for a in 0..=left {
            cur.push(a);
            rec(d, left - a, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    rec(d, k, &mut Vec::new(), &mut all);
    let fact = |n: u32| (1..=n).map(|x| x as f64).product::<f64>();
    all.into_iter()
        .map(|a| {
            let m = fact(k) / a.iter().map(|&x| fact(x)).product::<f64>();
            (a, m)
        })
        .collect()
}

/// Empirical Bernstein constant
/// `‖D^k Δ̇_j u‖_{L^q} / (2^{j(k + d(1/p − 1/q))}‖Δ̇_j u‖_{L^p})`,
/// with `|D^k u|² = Σ_{|α|=k} (k!/α!)|∂^α u|²`.
pub fn bernstein_probe(
    bank: &DyadicBank,
    field: &GridField,
    j: i32,
    k: u32,
    p: f64,
    q: f64,
) -> Result<f64> {
    if !(p >= 1.0 && q >= p) {
        return Err(BesovError::InvalidExponent { p, q });
    }
    let block = dyadic_block(bank, field, j)?;
    if block.l2_squared() == 0.0 {
        return Err(BesovError::ZeroBlock { j });
    }
    let d = bank.grid().dim();
    let grid = bank.grid();
    let denom = lebesgue_norm(&block, p);
    let num = if k == 0 {
        lebesgue_norm(&block, q)
    } else {
        let mut acc = vec![0.0; grid.len()];
        for (alpha, mult) in multi_indices(d, k) {
            let deriv = block.partial(&alpha);
            let phys: Vec<Vec<f64>> = if block.is_real() {
                deriv.physical()
            } else {
                deriv
                    .physical_complex()
                    .into_iter()
                    .map(|c| c.into_iter().map(|z| z.norm()).collect())
                    .collect()
            };
            for c in &phys {
                for (a, x) in acc.iter_mut().zip(c) {
                    *a += mult * x * x;
                }
            }
        }
        let modulus: Vec<f64> = acc.into_iter().map(f64::sqrt).collect();
        lebesgue_norm_samples(&modulus, grid.cell_volume(), q)
    };
    let inv = |x: f64| if x.is_infinite() { 0.0 } else { 1.0 / x };
    let scale = 2f64.powf(j as f64 * (k as f64 + d as f64 * (inv(p) - inv(q))));
    Ok(num / (scale * denom))
}

/// Real zero-mean random field with `|c_ξ| ∝ |ξ|^{-(σ + d/2)}` on the band
/// where the default bank sums to one, uniformly random phases, normalized
/// so that `sup_j 2^{jσ}‖Δ̇_j u‖_{L²} = 1`.
pub fn random_besov_field(
    grid: &Arc<Grid>,
    seed: u64,
    sigma: f64,
    components: usize,
) -> Result<GridField> {
    let d = grid.dim() as f64;
    if !(sigma >= -d / 2.0 && sigma <= d / 2.0 + 1.0) {
        return Err(BesovError::InvalidSigma { sigma });
    }
    let bank = DyadicBank::with_defaults(grid)?;
    let (lo, hi) = bank.exact_band();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps = Vec::with_capacity(components);
    for _ in 0..components {
        let phases: Vec<f64> = (0..grid.len())
            .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
            .collect();
        let spec: Vec<Complex64> = (0..grid.len())
            .map(|i| {
                let k = grid.wavenumber(i);
                if !(k >= lo && k <= hi) {
                    return Complex64::new(0.0, 0.0);
                }
                let j = grid.conjugate_index(i);
                let amp = k.powf(-(sigma + d / 2.0));
                if i <= j {
                    Complex64::from_polar(amp, phases[i])
                } else {
                    Complex64::from_polar(amp, -phases[j])
                }
            })
            .collect();
        comps.push(spec);
    }
    let field = GridField::from_spectra(grid, comps, true);
    let top = combine_blocks(&bank, &block_norms(&bank, &field, 2.0), sigma, f64::INFINITY);
    Ok(field.scale(1.0 / top))
}

const MAGIC: &[u8; 4] = b"TFGF";
pub const CONTAINER_VERSION: u32 = 1;

/// Writes a real field: header (magic, version, d, N, Λ, components) then
/// row-major little-endian `f64` samples, one component after another.
pub fn write_field<W: Write>(mut w: W, field: &GridField) -> Result<()> {
    let grid = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.points() as u64).to_le_bytes())?;
    w.write_all(&grid.lambda().to_le_bytes())?;
    w.write_all(&(field.components() as u32).to_le_bytes())?;
    for c in field.physical() {
        let mut buf = Vec::with_capacity(c.len() * 8);
        for x in c {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<GridField> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(BesovError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CONTAINER_VERSION {
        return Err(BesovError::Format(format!("unsupported version {version}")));
    }
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let lambda = f64::from_le_bytes(b8);
    r.read_exact(&mut b4)?;
    let comps = u32::from_le_bytes(b4) as usize;
    let grid = Grid::new(d, n, lambda)?;
    let mut samples = Vec::with_capacity(comps);
    let mut buf = vec![0u8; grid.len() * 8];
    for _ in 0..comps {
        r.read_exact(&mut buf)?;
        samples.push(
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect::<Vec<f64>>(),
        );
    }
    Ok(GridField::from_physical(&grid, &samples))
}
