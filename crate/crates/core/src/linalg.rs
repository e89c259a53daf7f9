//! Exponential and φ-functions of small real matrices.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64;

/// Eigenvalue separation below which the 2×2 closed form is abandoned.
pub const SEPARATION_MIN: f64 = 1e-3;

/// `φ₁(z) = (e^z − 1)/z`, by Taylor series near the origin.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 0.5 {
        taylor_phi(z, 1)
    } else {
        (z.exp() - 1.0) / z
    }
}

/// `φ₂(z) = (e^z − 1 − z)/z²`.
pub fn phi2(z: Complex64) -> Complex64 {
    if z.norm() < 0.5 {
        taylor_phi(z, 2)
    } else {
        (z.exp() - 1.0 - z) / (z * z)
    }
}

pub fn phi1_real(x: f64) -> f64 {
    phi1(Complex64::new(x, 0.0)).re
}

pub fn phi2_real(x: f64) -> f64 {
    phi2(Complex64::new(x, 0.0)).re
}

/// `Σ_m z^m/(m+k)!`, truncated once terms fall below rounding.
fn taylor_phi(z: Complex64, k: u32) -> Complex64 {
    let mut term = Complex64::new(1.0 / (1..=k).map(|x| x as f64).product::<f64>(), 0.0);
    let mut sum = term;
    for m in 1..30 {
        term *= z / (m + k) as f64;
        sum += term;
        if term.norm() < 1e-18 * sum.norm() {
            break;
        }
    }
    sum
}

/// `(e^Z, φ₁(Z), φ₂(Z))` for a real matrix.
pub type MatFunctions2 = [Matrix2<f64>; 3];

/// Closed form through the two eigenvalues: for any analytic `f`,
/// `f(Z) = a I + b (Z − μI)` with `a` the mean of `f` over the spectrum and
/// `b` its divided difference. Returns `None` when the eigenvalues are too
/// close for the divided difference to be accurate.
pub fn matfun2_closed(z: &Matrix2<f64>) -> Option<MatFunctions2> {
    let tr = z[(0, 0)] + z[(1, 1)];
    let det = z[(0, 0)] * z[(1, 1)] - z[(0, 1)] * z[(1, 0)];
    let mu = 0.5 * tr;
    let disc = Complex64::new(mu * mu - det, 0.0).sqrt();
    let (z1, z2) = (mu + disc, mu - disc);
    let shifted = z - Matrix2::identity() * mu;
    let scale = shifted.abs().max().max(1.0);
    if (z1 - z2).norm() < SEPARATION_MIN * scale {
        return None;
    }
    let eval = |f: &dyn Fn(Complex64) -> Complex64| {
        let (f1, f2) = (f(z1), f(z2));
        let a = 0.5 * (f1 + f2);
        let b = (f1 - f2) / (z1 - z2);
        Matrix2::identity() * a.re + shifted * b.re
    };
    Some([eval(&|x| x.exp()), eval(&phi1), eval(&phi2)])
}

/// `(e^Z, φ₁(Z), φ₂(Z))` for a square matrix from one exponential of the
/// augmented block matrix `[[Z, I, 0], [0, 0, I], [0, 0, 0]]`.
pub fn matfun_augmented(z: &DMatrix<f64>) -> [DMatrix<f64>; 3] {
    let n = z.nrows();
    let mut aug = DMatrix::<f64>::zeros(3 * n, 3 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(z);
    for i in 0..n {
        aug[(i, n + i)] = 1.0;
        aug[(n + i, 2 * n + i)] = 1.0;
    }
    let e = aug.exp();
    [
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
        e.view((0, 2 * n), (n, n)).into_owned(),
    ]
}

/// Closed form when possible, augmented exponential otherwise.
pub fn matfun2(z: &Matrix2<f64>) -> MatFunctions2 {
    if let Some(f) = matfun2_closed(z) {
        return f;
    }
    let dz = DMatrix::from_column_slice(2, 2, z.as_slice());
    let [e, p1, p2] = matfun_augmented(&dz);
    let conv = |m: DMatrix<f64>| Matrix2::from_column_slice(m.as_slice());
    [conv(e), conv(p1), conv(p2)]
}
