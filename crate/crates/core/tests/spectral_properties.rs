use nalgebra::Matrix2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use twofluid_core::besov::{random_besov_field, DyadicBank};
use twofluid_core::closure::{CapillarityProfile, ClosureCoefficients, ClosureModel, PressureLaw};
use twofluid_core::dynamics::helmholtz_split;
use twofluid_core::grid::Grid;
use twofluid_core::spectral::{self, *};

fn coeffs(fprime: f64) -> ClosureCoefficients {
    ClosureModel::new(
        PressureLaw::gamma(1.0, 1.0),
        PressureLaw::gamma(1.0, 1.0),
        fprime,
        CapillarityProfile::constant(),
        0.5,
    )
    .unwrap()
    .equilibrium_coefficients()
    .unwrap()
}

#[test]
fn closed_form_eigenvalues_match_eigensolver() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(0.0..10.0);
        let kappa = 10f64.powf(rng.random_range(1.5f64.log10()..4.0));
        let r = rng.random_range(0.01..10.0);
        let a = assemble_reduced_symbol(k, kappa, r);
        let ev = a.complex_eigenvalues();
        let oracle = [ev[0], ev[1]];
        let closed = eigenvalues_closed_form(k, kappa, r);
        worst = worst.max(pair_distance(closed, oracle));
    }
    assert!(worst < 1e-9, "max eigenvalue mismatch {worst}");
}

#[test]
fn dissipation_at_every_lattice_frequency() {
    let grid = Grid::new(2, 64, 4.0).unwrap();
    for kappa in [1.5, 10.0, 1e4] {
        for &k in &lattice_radii(&grid, grid.nyquist()) {
            for r in [0.25, 1.0] {
                for l in eigenvalues_closed_form(k, kappa, r) {
                    assert_eq!(l.re, -k * k);
                }
            }
        }
    }
}

#[test]
fn full_symbol_spectrum() {
    let c = coeffs(-1.0);
    let xi = [0.6, 0.8];
    let kappa = 9.0;
    let m = assemble_full_symbol(&xi, kappa, &c).unwrap();
    let ev: Vec<Complex64> = m.eigenvalues().unwrap().iter().cloned().collect();
    let mut want: Vec<Complex64> = Vec::new();
    for r in [c.r_plus, c.r_minus] {
        want.extend(eigenvalues_closed_form(1.0, kappa, r));
    }
    want.extend([Complex64::new(-1.0, 0.0); 2]);
    // Greedy matching is enough: the targets are well separated.
    let mut used = vec![false; ev.len()];
    for w in &want {
        let (i, d) = ev
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, z)| (i, (z - w).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        used[i] = true;
        assert!(d < 1e-9, "{w} unmatched ({d})");
    }
}

#[test]
fn similarity_transform_reproduces_reduced_blocks() {
    let c = coeffs(-1.0);
    let (k, kappa) = (1.0, 4.0);
    let l = mode_generator(k, kappa, &c.beta);
    for r in [c.r_plus, c.r_minus] {
        let w = [c.beta[2], r - c.beta[0]];
        // Left eigenvector rows act on (n⁺, n⁻) and on (p⁺, p⁻) alike.
        let mut rows = nalgebra::Matrix2x4::zeros();
        rows[(0, 0)] = w[0];
        rows[(0, 1)] = w[1];
        rows[(1, 2)] = w[0];
        rows[(1, 3)] = w[1];
        let lhs = rows * l;
        let a = assemble_reduced_symbol(k, kappa, r);
        let rhs = a * rows;
        assert!((lhs - rhs).abs().max() < 1e-12, "r = {r}");
    }
    assert_eq!(assemble_reduced_symbol(1.0, 4.0, 1.0), Matrix2::new(0.0, -2.0, 2.5, -2.0));
}

#[test]
fn instability_witness() {
    let c = coeffs(0.5);
    assert!(c.r_minus < 0.0);
    let grid = Grid::new(2, 64, 8.0).unwrap();
    let radii = lattice_radii(&grid, 1.0);
    let (rate, k) = max_growth_rate(&radii, 4.0, &c, 2).unwrap();
    assert!(rate > 0.0, "no growing mode");
    assert!(k < 1.0);
    let stable = coeffs(-1.0);
    let (rate, _) = max_growth_rate(&radii, 4.0, &stable, 2).unwrap();
    assert!(rate < 0.0);
}

#[test]
fn lyapunov_equivalence_on_random_fields() {
    let grid = Grid::new(2, 64, 4.0).unwrap();
    let bank = DyadicBank::with_defaults(&grid).unwrap();
    let c = coeffs(-1.0);
    let kappa = 16.0;
    let radii = lattice_radii(&grid, grid.nyquist() * 2f64.sqrt());
    let lc = select_delta1(&radii, kappa, &c).unwrap();
    assert!(lc.lower > 0.0 && lc.upper >= lc.lower && lc.c0 > 0.0);
    for seed in 0..10 {
        let fields = TwoFluidFields {
            n_plus: random_besov_field(&grid, 4 * seed, 0.0, 1).unwrap(),
            n_minus: random_besov_field(&grid, 4 * seed + 1, 0.0, 1).unwrap(),
            u_plus: random_besov_field(&grid, 4 * seed + 2, 0.0, 2).unwrap(),
            u_minus: random_besov_field(&grid, 4 * seed + 3, 0.0, 2).unwrap(),
        };
        for j in bank.range() {
            let (e, s) = lyapunov_energy_and_norm(&fields, &bank, j, &c, kappa, lc.delta1).unwrap();
            assert!(e >= lc.lower * s * (1.0 - 1e-12), "j={j}: {e} < {} · {s}", lc.lower);
            assert!(e <= lc.upper * s * (1.0 + 1e-12), "j={j}: {e} > {} · {s}", lc.upper);
        }
    }
    assert!(lyapunov_energy(&TwoFluidFields::zeros(&grid), &bank, 0, &c, kappa, lc.delta1).unwrap() == 0.0);
    let unstable = coeffs(0.5);
    assert!(lyapunov_energy(&TwoFluidFields::zeros(&grid), &bank, 0, &unstable, kappa, 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reduced_symbol_trace_and_determinant(k in 0.0f64..20.0, kappa in 0.1f64..1e4, r in 0.01f64..10.0) {
        let a = assemble_reduced_symbol(k, kappa, r);
        let tr = a.trace();
        let det = a.determinant();
        prop_assert!((tr + 2.0 * k * k).abs() <= 1e-12 * (k * k).max(1.0));
        let want = r * k * k + kappa * k.powi(4);
        prop_assert!((det - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn diagonalization_round_trip(seed in 0u64..10_000) {
        let grid = Grid::new(2, 32, 2.0).unwrap();
        let c = coeffs(-1.0);
        let np = random_besov_field(&grid, seed, 0.0, 1).unwrap();
        let nm = random_besov_field(&grid, seed + 1, 0.0, 1).unwrap();
        let up = helmholtz_split(&random_besov_field(&grid, seed + 2, 0.0, 2).unwrap()).1;
        let um = helmholtz_split(&random_besov_field(&grid, seed + 3, 0.0, 2).unwrap()).1;
        let d = diagonalize_fields(&np, &nm, &up, &um, &c).unwrap();
        let (a, b, x, y) = recombine_fields(&d).unwrap();
        for (got, want) in [(&a, &np), (&b, &nm), (&x, &up), (&y, &um)] {
            prop_assert!(got.sub(want).l2_norm() <= 1e-12 * want.l2_norm());
        }
    }

    #[test]
    fn semigroup_isometry_and_contraction(seed in 0u64..10_000, t in 0.0f64..5.0) {
        let grid = Grid::new(2, 32, 2.0).unwrap();
        let f = random_besov_field(&grid, seed, 0.0, 1).unwrap();
        let r = [1.0, 1.0, 1.0];
        let free = spectral::propagate_semigroup(&f, t, 100.0, r, false).unwrap();
        prop_assert!((free.l2_norm() - f.l2_norm()).abs() <= 1e-12 * f.l2_norm());
        let damped = spectral::propagate_semigroup(&f, t, 100.0, r, true).unwrap();
        prop_assert!(damped.l2_norm() <= f.l2_norm() * (1.0 + 1e-12));
    }
}

#[test]
fn degenerate_roots_are_refused() {
    let c = ClosureCoefficients::from_betas([0.5, 0.0, 0.5, 0.5]).unwrap();
    assert!((c.r_plus - c.r_minus).abs() < 1e-10);
    let grid = Grid::new(2, 16, 1.0).unwrap();
    let z = random_besov_field(&grid, 0, 0.0, 1).unwrap();
    let v = random_besov_field(&grid, 1, 0.0, 2).unwrap();
    assert!(matches!(
        diagonalize_fields(&z, &z, &v, &v, &c),
        Err(SpectralError::DegenerateRoots { .. })
    ));
}
