use proptest::prelude::*;
use twofluid_core::closure::{CapillarityProfile, ClosureModel, PressureLaw};

fn model(g_plus: f64, g_minus: f64, alpha: f64, fprime: f64) -> ClosureModel {
    ClosureModel::new(
        PressureLaw::gamma(1.0, g_plus),
        PressureLaw::gamma(1.0, g_minus),
        fprime,
        CapillarityProfile::constant(),
        alpha,
    )
    .unwrap()
}

/// Lower end of the stability window, computed from the γ-laws directly.
fn window_low(g_minus: f64, alpha: f64) -> f64 {
    let rho_minus = 1.0 / (1.0 - alpha);
    let s2 = g_minus * rho_minus.powf(g_minus - 1.0);
    -s2 / (1.0 - alpha)
}

/// Plain bisection on the pressure balance, independent of the solver.
fn bisect_rho_plus(m: &ClosureModel, rp: f64, rm: f64) -> f64 {
    let f = |rho: f64| {
        m.plus.pressure(rho) - m.minus.pressure(rm * rho / (rho - rp)) - m.capillary.value(rm)
    };
    let mut lo = rp * (1.0 + 1e-13);
    let mut hi = rp * 2.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Phase pressures as functions of the fraction densities.
fn pressures(m: &ClosureModel, rp: f64, rm: f64) -> (f64, f64) {
    let rho = bisect_rho_plus(m, rp, rm);
    let p_plus = m.plus.pressure(rho);
    (p_plus, p_plus - m.capillary.value(rm))
}

/// `β` table from centered differences of the pressures:
/// `β₁ = ∂_{R⁺}P⁺/ρ⁺`, `β₂ = ∂_{R⁻}P⁺/ρ⁺`, `β₃ = ∂_{R⁺}P⁻/ρ⁻`, `β₄ = ∂_{R⁻}P⁻/ρ⁻`.
fn betas_by_differences(m: &ClosureModel, rp: f64, rm: f64) -> [f64; 4] {
    let h = 1e-5;
    let rho_plus = bisect_rho_plus(m, rp, rm);
    let rho_minus = rm * rho_plus / (rho_plus - rp);
    let (a1, b1) = pressures(m, rp + h, rm);
    let (a0, b0) = pressures(m, rp - h, rm);
    let (c1, d1) = pressures(m, rp, rm + h);
    let (c0, d0) = pressures(m, rp, rm - h);
    [
        (a1 - a0) / (2.0 * h) / rho_plus,
        (c1 - c0) / (2.0 * h) / rho_plus,
        (b1 - b0) / (2.0 * h) / rho_minus,
        (d1 - d0) / (2.0 * h) / rho_minus,
    ]
}

#[test]
fn worked_example_exact() {
    let c = model(1.0, 1.0, 0.5, -1.0).equilibrium_coefficients().unwrap();
    assert_eq!(c.beta, [0.5, 0.25, 0.5, 0.75]);
    assert_eq!(c.r_plus, 1.0);
    assert_eq!(c.r_minus, 0.25);
    assert!(c.stable);
}

#[test]
fn betas_match_finite_differences() {
    for (gp, gm, a, fp) in [(1.0, 1.0, 0.5, -1.0), (1.4, 2.0, 0.3, -0.7), (3.0, 1.2, 0.8, 0.3)] {
        let m = model(gp, gm, a, fp);
        let b = m.equilibrium_betas().unwrap();
        let fd = betas_by_differences(&m, 1.0, 1.0);
        for i in 0..4 {
            assert!((b[i] - fd[i]).abs() < 1e-7 * b[i].abs().max(1.0), "{i}: {} vs {}", b[i], fd[i]);
        }
    }
}

#[test]
fn g_coefficients_match_difference_oracle() {
    // Away from equilibrium g_i + β_i is the local β weighted by √(R/m(R)).
    let m = ClosureModel::new(
        PressureLaw::gamma(1.0, 1.4),
        PressureLaw::gamma(1.0, 2.0),
        -0.6,
        CapillarityProfile::Power { exponent: 0.5 },
        0.4,
    )
    .unwrap();
    let beta = m.equilibrium_betas().unwrap();
    for (rp, rm) in [(1.1, 0.9), (0.7, 1.3), (1.5, 1.5)] {
        let g = m.g_coefficients(rp, rm).unwrap();
        let local = betas_by_differences(&m, rp, rm);
        let w = |r: f64| (r / m.profile.m(r)).sqrt();
        let want = [
            local[0] * w(rp) - beta[0],
            local[1] * w(rm) - beta[1],
            local[2] * w(rp) - beta[2],
            local[3] * w(rm) - beta[3],
        ];
        for i in 0..4 {
            assert!((g[i] - want[i]).abs() < 1e-7, "({rp},{rm}) g{}: {} vs {}", i + 1, g[i], want[i]);
        }
    }
    let eq = m.g_coefficients(1.0, 1.0).unwrap();
    assert!(eq.iter().all(|x| x.abs() < 1e-14));
}

#[test]
fn equal_pressure_duplicate_formula() {
    // P = ρ for both phases, linear f: the mixture state is explicit.
    let m = model(1.0, 1.0, 0.5, -1.0);
    let (rp, rm) = (1.1, 0.9);
    let st = m.mixture_state(rp, rm).unwrap();
    // ρ − Rm ρ/(ρ − Rp) = f(Rm) = −(Rm − 1)  ⇒  ρ² − (Rp + Rm + f)ρ + Rp f = 0.
    let f = -(rm - 1.0);
    let s = rp + rm + f;
    let rho = 0.5 * (s + (s * s - 4.0 * rp * f).sqrt());
    assert!((st.rho_plus - rho).abs() < 1e-12);
    let rho_minus = rm * rho / (rho - rp);
    let a = rp / rho;
    let c2 = 1.0 / ((1.0 - a) * rho + a * rho_minus);
    assert!((st.c2 - c2).abs() < 1e-12);
    let g = m.g_coefficients(rp, rm).unwrap();
    let want = [
        c2 * rho_minus / rho * rp.sqrt() - 0.5,
        c2 * (1.0 - (1.0 - a)) * rm.sqrt() - 0.25,
        c2 * rp.sqrt() - 0.5,
        c2 * (rho / rho_minus + a) * rm.sqrt() - 0.75,
    ];
    for i in 0..4 {
        assert!((g[i] - want[i]).abs() < 1e-12, "g{}", i + 1);
    }
}

#[test]
fn solver_agrees_with_bisection_on_many_inputs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let models = [model(1.0, 1.0, 0.5, -1.0), model(2.0, 1.4, 0.3, -0.5), model(1.2, 3.0, 0.7, -2.0)];
    for i in 0..1000 {
        let m = &models[i % models.len()];
        let rp = rng.random_range(0.2..5.0);
        let rm = rng.random_range(0.2..5.0);
        let Ok(x) = m.solve_rho_plus(rp, rm, 1e-14) else { continue };
        let y = bisect_rho_plus(m, rp, rm);
        assert!((x - y).abs() < 1e-10 * y, "{rp} {rm}: {x} vs {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sign_identity_and_roots(gp in 1.0f64..3.0, gm in 1.0f64..3.0, a in 0.1f64..0.9, t in 0.0f64..1.0) {
        let lo = 1.5 * window_low(gm, a);
        let fp = lo + t * (0.5 - lo);
        prop_assume!(fp.abs() > 1e-6);
        let m = model(gp, gm, a, fp);
        let b = m.equilibrium_betas().unwrap();
        let det = b[0] * b[3] - b[1] * b[2];
        prop_assert_eq!(det.signum(), -fp.signum());
        let report = m.stability_margin().unwrap();
        prop_assert!((report.window_low - window_low(gm, a)).abs() < 1e-10 * report.window_low.abs());
        prop_assert_eq!(report.stable, fp > window_low(gm, a) && fp < 0.0);
        if let Ok(c) = m.equilibrium_coefficients() {
            let scale = (b[0] + b[3]).abs().max(1e-300);
            prop_assert!((c.r_plus + c.r_minus - (b[0] + b[3])).abs() <= 1e-12 * scale);
            prop_assert!((c.r_plus * c.r_minus - det).abs() <= 1e-12 * det.abs().max(scale * scale * 1e-3));
            if c.stable {
                prop_assert!(b.iter().all(|&x| x > 0.0));
                prop_assert!(c.r_plus > c.r_minus && c.r_minus > 0.0);
            }
        }
    }

    #[test]
    fn equilibrium_reproduced(gp in 1.0f64..3.0, gm in 1.0f64..3.0, a in 0.1f64..0.9) {
        let m = model(gp, gm, a, -0.1);
        let st = m.mixture_state(1.0, 1.0).unwrap();
        prop_assert!((st.rho_plus - 1.0 / a).abs() < 1e-10 / a);
        prop_assert!((st.rho_minus - 1.0 / (1.0 - a)).abs() < 1e-10 / (1.0 - a));
        prop_assert!((st.alpha_plus - a).abs() < 1e-10);
        prop_assert!((st.alpha_plus + st.alpha_minus - 1.0).abs() < 1e-15);
        prop_assert!(st.rho_plus > st.r_plus);
    }

    #[test]
    fn mixture_state_invariants(rp in 0.2f64..5.0, rm in 0.2f64..5.0) {
        let m = model(1.4, 2.0, 0.4, -0.8);
        if let Ok(st) = m.mixture_state(rp, rm) {
            prop_assert!((st.alpha_plus * st.rho_plus - rp).abs() < 1e-12 * rp);
            prop_assert!((st.alpha_minus * st.rho_minus - rm).abs() < 1e-12 * rm);
            prop_assert!(st.rho_plus > rp);
        }
    }

    #[test]
    fn fluctuation_round_trip(r in 0.1f64..10.0, which in 0usize..3) {
        let profile = [
            CapillarityProfile::constant(),
            CapillarityProfile::Power { exponent: 1.5 },
            CapillarityProfile::Saturating { c: 0.7 },
        ][which];
        let y = profile.fluctuation_forward(r).unwrap();
        let back = profile.fluctuation_inverse(y).unwrap();
        prop_assert!((back - r).abs() <= 1e-12 * r.max(1.0), "{} vs {}", back, r);
    }
}
