//! Measurement campaigns: each takes a config and returns a report whose
//! verdicts are derived from the numbers it records.
//!
//! Records without a capillarity carry `kappa = 0`; the `t` column holds the
//! abscissa of the series (time, or `|ξ|` for spectra).

use std::path::Path;
use std::sync::Arc;

use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use twofluid_core::besov::{self, DyadicBank};
use twofluid_core::closure::{ClosureCoefficients, ClosureModel};
use twofluid_core::dynamics::{
    self, DiagnosticRecord, DiagnosticsSpec, Integrator, RunOutcome, SimulationState,
};
use twofluid_core::field::GridField;
use twofluid_core::grid::Grid;
use twofluid_core::spectral::{self, TwoFluidFields};

use crate::checkpoint::{checkpoint_load, checkpoint_save, CheckpointMeta};
use crate::config::{delta_for, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::fit::{fit_exponential_rate, fit_loglog_rate, trapezoid};
use crate::report::{ExperimentReport, Provenance, ReportFormat, Rule, Verdict};

/// Snapshots a decay fit needs inside its window.
pub const MIN_WINDOW_SNAPSHOTS: usize = 8;

struct Setup {
    grid: Arc<Grid>,
    closure: ClosureModel,
    bank: DyadicBank,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let grid = cfg.grid.build()?;
    let bank = DyadicBank::with_defaults(&grid)?;
    Ok(Setup {
        closure: cfg.closure.build()?,
        grid,
        bank,
    })
}

fn new_report(name: &str, cfg: &ExperimentConfig) -> ExperimentReport {
    ExperimentReport::new(name, Provenance::for_config(cfg))
}

fn push_records(rep: &mut ExperimentReport, run_id: &str, kappa: f64, records: &[DiagnosticRecord]) {
    for r in records {
        for (name, v) in &r.values {
            rep.record(run_id, kappa, r.t, name, *v);
        }
    }
}

fn series(records: &[DiagnosticRecord], name: &str) -> Vec<(f64, f64)> {
    records.iter().filter_map(|r| r.get(name).map(|v| (r.t, v))).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Largest real part of the mode generator over the radii, and where.
pub fn generator_growth(radii: &[f64], kappa: f64, beta: &[f64; 4]) -> (f64, f64) {
    radii
        .par_iter()
        .map(|&k| {
            let m: Matrix4<f64> = spectral::mode_generator(k, kappa, beta);
            let top = m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            (top, k)
        })
        .reduce(|| (f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a })
}

/// Gaussian bumps of width `envelope·Λ` near the box centre, with
/// seed-dependent weights and offsets; velocities mix rotational and
/// gradient parts.
pub fn localized_data(grid: &Arc<Grid>, amplitude: f64, envelope: f64, seed: u64) -> TwoFluidFields {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = envelope * grid.lambda();
    let centre = 0.5 * grid.box_length();
    let mut draw = || {
        let c: f64 = rng.random_range(0.5..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let off = [rng.random_range(-w..w), rng.random_range(-w..w), rng.random_range(-w..w)];
        (c, off)
    };
    let d = grid.dim();
    let bump = move |x: [f64; 3], off: [f64; 3]| -> (f64, [f64; 3]) {
        let mut r2 = 0.0;
        let mut y = [0.0; 3];
        for a in 0..d {
            y[a] = (x[a] - centre - off[a]) / w;
            r2 += y[a] * y[a];
        }
        let g = (-0.5 * r2).exp();
        // Gradient in units of 1/w.
        (g, [-y[0] * g, -y[1] * g, -y[2] * g])
    };
    let density = |c: f64, off: [f64; 3]| GridField::from_fn(grid, 1, move |_, x| amplitude * c * bump(x, off).0);
    let velocity = |(c1, o1): (f64, [f64; 3]), (c2, o2): (f64, [f64; 3])| {
        GridField::from_fn(grid, d, move |a, x| {
            let (_, rot) = bump(x, o1);
            let (_, grad) = bump(x, o2);
            let curl = match a {
                0 => -rot[1],
                1 => rot[0],
                _ => 0.0,
            };
            amplitude * (c1 * curl + c2 * grad[a])
        })
    };
    let (a, oa) = draw();
    let (b, ob) = draw();
    let (p1, p2, m1, m2) = (draw(), draw(), draw(), draw());
    TwoFluidFields {
        n_plus: density(a, oa),
        n_minus: density(b, ob),
        u_plus: velocity(p1, p2),
        u_minus: velocity(m1, m2),
    }
}

/// Data with a `Ḃ^{σ₁}_{2,∞}` spectrum in `(κ^{-1/2}n, ∇n, u)`:
/// `n̂ = ĝ/√(κ⁻¹ + |ξ|²)` with `g` flat at regularity `σ₁`.
pub fn decay_data(grid: &Arc<Grid>, kappa: f64, sigma1: f64, amplitude: f64, seed: u64) -> Result<TwoFluidFields> {
    let d = grid.dim();
    let shape = |f: GridField| {
        let g = grid.clone();
        f.map_spectral(|i, v| {
            let k = g.wavenumber(i);
            v * amplitude / (1.0 / kappa + k * k).sqrt()
        })
    };
    Ok(TwoFluidFields {
        n_plus: shape(besov::random_besov_field(grid, seed, sigma1, 1)?),
        n_minus: shape(besov::random_besov_field(grid, seed + 1, sigma1, 1)?),
        u_plus: besov::random_besov_field(grid, seed + 2, sigma1, d)?.scale(amplitude),
        u_minus: besov::random_besov_field(grid, seed + 3, sigma1, d)?.scale(amplitude),
    })
}

/// Random flat-spectrum data in every component.
pub fn random_data(grid: &Arc<Grid>, amplitude: f64, seed: u64) -> Result<TwoFluidFields> {
    let d = grid.dim();
    Ok(TwoFluidFields {
        n_plus: besov::random_besov_field(grid, seed, 0.0, 1)?.scale(amplitude),
        n_minus: besov::random_besov_field(grid, seed + 1, 0.0, 1)?.scale(amplitude),
        u_plus: besov::random_besov_field(grid, seed + 2, 0.0, d)?.scale(amplitude),
        u_minus: besov::random_besov_field(grid, seed + 3, 0.0, d)?.scale(amplitude),
    })
}

/// `e^{tΔ}` applied to every component.
pub fn heat_flow(fields: &TwoFluidFields, t: f64) -> TwoFluidFields {
    let grid = fields.grid().clone();
    let damp = |f: &GridField| {
        let g = grid.clone();
        f.map_spectral(|i, v| v * (-g.wavenumber(i).powi(2) * t).exp())
    };
    TwoFluidFields {
        n_plus: damp(&fields.n_plus),
        n_minus: damp(&fields.n_minus),
        u_plus: damp(&fields.u_plus),
        u_minus: damp(&fields.u_minus),
    }
}

pub fn closure_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let closure = cfg.closure.build()?;
    let th = &cfg.thresholds;
    let mut rep = new_report("closure-check", cfg);
    let eq = closure.mixture_state(1.0, 1.0)?;
    let st = closure.stability_margin()?;
    let beta = closure.equilibrium_betas()?;
    for (name, v) in [
        ("rho_plus", eq.rho_plus),
        ("rho_minus", eq.rho_minus),
        ("s2_plus", eq.s2_plus),
        ("s2_minus", eq.s2_minus),
        ("c2", eq.c2),
        ("window_low", st.window_low),
        ("window_high", st.window_high),
        ("margin", st.margin),
    ] {
        rep.record("closure", 0.0, 0.0, name, v);
    }
    for (i, b) in beta.iter().enumerate() {
        rep.record("closure", 0.0, 0.0, &format!("beta_{}", i + 1), *b);
    }
    let det = beta[0] * beta[3] - beta[1] * beta[2];
    match ClosureCoefficients::from_betas(beta) {
        Ok(c) => {
            rep.record("closure", 0.0, 0.0, "r_plus", c.r_plus);
            rep.record("closure", 0.0, 0.0, "r_minus", c.r_minus);
            let sum = rel_err(c.r_plus + c.r_minus, beta[0] + beta[3]);
            let prod = rel_err(c.r_plus * c.r_minus, det);
            rep.verdicts.push(Verdict::new("root_sum", sum, Rule::AtMost { bound: th.identity_rel }));
            rep.verdicts.push(Verdict::new("root_product", prod, Rule::AtMost { bound: th.identity_rel }));
        }
        Err(e) => rep.fail_run("roots", e),
    }
    let sign_ok = st.fprime == 0.0 || det.signum() == -st.fprime.signum();
    rep.verdicts.push(Verdict::flag("determinant_sign", sign_ok));
    rep.verdicts.push(Verdict::flag("stable", st.stable));
    Ok(rep)
}

pub fn spectrum(cfg: &ExperimentConfig, kappa: f64, xi_max: f64) -> Result<ExperimentReport> {
    let s = setup(cfg)?;
    let th = &cfg.thresholds;
    let mut rep = new_report("spectrum", cfg);
    let coeffs = s.closure.equilibrium_coefficients()?;
    let radii = spectral::lattice_radii(&s.grid, xi_max);
    let mut worst: f64 = 0.0;
    for (name, r) in [("r_plus", coeffs.r_plus), ("r_minus", coeffs.r_minus)] {
        for &k in &radii {
            let closed = spectral::eigenvalues_closed_form(k, kappa, r);
            let ev = spectral::assemble_reduced_symbol(k, kappa, r).complex_eigenvalues();
            worst = worst.max(spectral::pair_distance(closed, [ev[0], ev[1]]));
            rep.record(name, kappa, k, "lambda_1_re", closed[0].re);
            rep.record(name, kappa, k, "lambda_1_im", closed[0].im);
            rep.record(name, kappa, k, "lambda_2_re", closed[1].re);
            rep.record(name, kappa, k, "lambda_2_im", closed[1].im);
        }
    }
    let mut top = f64::NEG_INFINITY;
    for &k in &radii {
        let (g, _) = generator_growth(&[k], kappa, &coeffs.beta);
        top = top.max(g);
        rep.record("full", kappa, k, "max_re", g);
    }
    rep.verdicts.push(Verdict::new("eigen_mismatch", worst, Rule::AtMost { bound: th.eigen_abs }));
    rep.verdicts.push(Verdict::flag("growth_matches_stability", (top < 0.0) == coeffs.stable));
    Ok(rep)
}

pub fn lp_verify(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let s = setup(cfg)?;
    let th = &cfg.thresholds;
    let (grid, bank) = (&s.grid, &s.bank);
    let mut rep = new_report("lp-verify", cfg);
    let (lo, hi) = bank.exact_band();
    let partition = bank
        .partition_sum()
        .iter()
        .enumerate()
        .filter(|(i, _)| (lo..=hi).contains(&grid.wavenumber(*i)))
        .map(|(_, s)| (s - 1.0).abs())
        .fold(0.0, f64::max);
    let mut overlap: f64 = 0.0;
    for j in bank.range() {
        let a = bank.block_dense(j)?;
        for l in bank.range().filter(|l| l - j >= 2) {
            let b = bank.block_dense(l)?;
            overlap = overlap.max(a.iter().zip(&b).map(|(x, y)| (x * y).abs()).sum());
        }
    }
    let trials = cfg.experiment.samples.max(1) as u64;
    let seed = cfg.experiment.seed;
    let per: Vec<Result<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let u = besov::random_besov_field(grid, seed + t, 0.0, 1)?;
            let mut sum = GridField::zeros(grid, 1, true);
            for j in bank.range() {
                sum = sum.add(&besov::dyadic_block(bank, &u, j)?);
            }
            let recon = sum.sub(&u).l2_norm() / u.l2_norm();
            let mut worst: f64 = 0.0;
            for j in bank.range() {
                for (k, p, q) in [(1, 2.0, 2.0), (0, 2.0, f64::INFINITY), (2, 2.0, 4.0)] {
                    if let Ok(r) = besov::bernstein_probe(bank, &u, j, k, p, q) {
                        worst = worst.max(r);
                    }
                }
            }
            Ok((recon, worst))
        })
        .collect();
    let mut recon: f64 = 0.0;
    let mut bern: f64 = 0.0;
    for r in per {
        let (a, b) = r?;
        recon = recon.max(a);
        bern = bern.max(b);
    }
    // Plane wave at a lattice frequency in the middle of the band.
    let m = (grid.lambda() * 2f64.powf(0.5 * (bank.j_min() + bank.j_max()) as f64)).round().max(1.0);
    let k0 = m / grid.lambda();
    let wave = GridField::from_fn(grid, 1, |_, x| (k0 * x[0]).cos());
    let mut plane: f64 = 0.0;
    for j in bank.range().filter(|&j| besov::phi(k0 * 2f64.powi(-j)) > 0.0) {
        let r = besov::bernstein_probe(bank, &wave, j, 1, 2.0, 2.0)?;
        let want = k0 * 2f64.powi(-j);
        let inside = (besov::ANNULUS_INNER..=besov::ANNULUS_OUTER).contains(&r);
        plane = plane.max(if inside { (r - want).abs() } else { f64::INFINITY });
    }
    for (name, v) in [
        ("partition_error", partition),
        ("block_overlap", overlap),
        ("reconstruction_error", recon),
        ("bernstein_max", bern),
        ("plane_wave_error", plane),
    ] {
        rep.record("lp", 0.0, 0.0, name, v);
    }
    rep.verdicts.push(Verdict::new("partition", partition, Rule::AtMost { bound: th.partition_abs }));
    rep.verdicts.push(Verdict::new("disjoint_blocks", overlap, Rule::AtMost { bound: 0.0 }));
    rep.verdicts.push(Verdict::new("reconstruction", recon, Rule::AtMost { bound: th.reconstruction_rel }));
    rep.verdicts.push(Verdict::new("bernstein", bern, Rule::AtMost { bound: th.bernstein_max }));
    rep.verdicts.push(Verdict::new("plane_wave", plane, Rule::AtMost { bound: th.partition_abs }));
    Ok(rep)
}

/// `Λ/(2√κ2^j)`: the time a packet at frequency `2^j` needs to cross about
/// half the box.
pub fn dispersion_horizon(grid: &Grid, kappa: f64, j: i32) -> f64 {
    grid.lambda() / (2.0 * kappa.sqrt() * 2f64.powi(j))
}

pub fn dispersion(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let s = setup(cfg)?;
    let e = &cfg.experiment;
    let grid = &s.grid;
    let mut rep = new_report("dispersion", cfg);
    let j = e.block;
    let scale = 2f64.powi(-j);
    let data = GridField::from_spectra(
        grid,
        vec![(0..grid.len()).map(|i| Complex64::new(besov::phi(grid.wavenumber(i) * scale), 0.0)).collect()],
        true,
    );
    if data.l2_squared() == 0.0 {
        return Err(HarnessError::Config(format!("block {j} contains no lattice frequencies")));
    }
    let t_max = dispersion_horizon(grid, e.kappa, j);
    let [t0, t1] = e.window.unwrap_or([t_max / 10.0, t_max]);
    let r2 = s.closure.equilibrium_coefficients().ok().filter(|c| c.stable).map_or(1.0, |c| c.r_minus);
    let r = [1.0, r2, 1.0];
    let n = e.samples.max(3);
    let times: Vec<f64> = (0..n).map(|i| t0 * (t1 / t0).powf(i as f64 / (n - 1) as f64)).collect();
    let sup: Vec<Result<f64>> = times
        .par_iter()
        .map(|&t| {
            let u = spectral::propagate_semigroup(&data, t, e.kappa, r, e.viscous)?;
            Ok(besov::lebesgue_norm(&u, f64::INFINITY))
        })
        .collect();
    let mut samples = Vec::with_capacity(n);
    for (t, v) in times.iter().zip(sup) {
        let v = v?;
        rep.record("semigroup", e.kappa, *t, "sup_norm", v);
        samples.push((*t, v));
    }
    let fit = fit_loglog_rate(&samples, Some([t0, t1]))?;
    let target = -(grid.dim() as f64) / 2.0;
    rep.verdicts.push(Verdict::from_fit(
        "dispersive_exponent",
        fit,
        Rule::WithinRel { target, rel: cfg.thresholds.dispersion_rel },
    ));
    Ok(rep)
}

fn diagnostics_for(cfg: &ExperimentConfig, lyapunov: Option<f64>) -> DiagnosticsSpec {
    DiagnosticsSpec {
        energy: true,
        dispersive_p: Some(cfg.experiment.p),
        reference_error: true,
        derivatives: cfg.experiment.alphas.clone(),
        lyapunov_delta1: lyapunov,
        means: true,
    }
}

/// Initial state of a single run: localized data with `v(0) = Pu(0)` scaled
/// by the configured discrepancy.
pub fn initial_state(cfg: &ExperimentConfig, grid: &Arc<Grid>, kappa: f64) -> SimulationState {
    let e = &cfg.experiment;
    let fields = localized_data(grid, e.amplitude, e.envelope, e.seed);
    let mut state = SimulationState::new(kappa, fields, true);
    if e.discrepancy > 0.0 {
        let f = 1.0 + e.discrepancy * kappa.powf(-delta_for(grid.dim(), e.p));
        if let Some((vp, vm)) = state.reference.as_mut() {
            *vp = vp.scale(f);
            *vm = vm.scale(f);
        }
    }
    state
}

/// Runs one configured simulation, writing `diagnostics.csv`, `report.json`,
/// periodic checkpoints and a final checkpoint into `out`.
pub fn simulate(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<ExperimentReport> {
    let s = setup(cfg)?;
    let e = &cfg.experiment;
    std::fs::create_dir_all(out)?;
    let meta = CheckpointMeta { config_hash: cfg.hash(), seed: e.seed };
    let initial = match resume {
        Some(p) => checkpoint_load(p, Some(&s.grid))?.0,
        None => initial_state(cfg, &s.grid, e.kappa),
    };
    let kappa = initial.kappa;
    let icfg = cfg.integrator.build();
    let integ = Integrator::new(&s.grid, &s.closure, kappa, &icfg)?;
    let delta1 = s
        .closure
        .equilibrium_coefficients()
        .ok()
        .filter(|c| c.stable)
        .and_then(|c| {
            let radii = spectral::lattice_radii(&s.grid, s.grid.nyquist() * (s.grid.dim() as f64).sqrt());
            spectral::select_delta1(&radii, kappa, &c).ok()
        })
        .map(|l| l.delta1);
    let spec = diagnostics_for(cfg, delta1);
    let every = cfg.integrator.checkpoint_every as u64;
    let mut save_error = None;
    let outcome = dynamics::run_simulation(initial, &s.closure, &integ, e.horizon, &spec, &s.bank, |st| {
        if every > 0 && st.step % every == 0 && save_error.is_none() {
            let path = out.join(format!("checkpoint_{:08}.tfck", st.step));
            save_error = checkpoint_save(st, &meta, &path).err();
        }
    });
    if let Some(err) = save_error {
        return Err(err.into());
    }
    checkpoint_save(&outcome.last, &meta, &out.join("final.tfck"))?;
    let mut rep = new_report("simulate", cfg);
    push_records(&mut rep, "run", kappa, &outcome.records);
    if let Some(f) = &outcome.failure {
        rep.fail_run("run", f);
    }
    rep.verdicts.push(Verdict::flag("completed", outcome.failure.is_none()));
    rep.emit(ReportFormat::Csv, &out.join("diagnostics.csv"))?;
    rep.emit(ReportFormat::Json, &out.join("report.json"))?;
    Ok(rep)
}

/// `E(κ) = sup_t ‖Pu − v‖_{Ḃ^{d/2−1}} + ∫‖Pu − v‖_{Ḃ^{d/2+1}}dt` and
/// `D(κ) = (∫‖(κ^{-1/2}n, ∇n, Qu)‖²_{Ḃ^{d/p}_{p,1}}dt)^{1/2}` from a run.
pub fn limit_observables(records: &[DiagnosticRecord]) -> (f64, f64) {
    let low = series(records, "ref_error_low");
    let high = series(records, "ref_error_high");
    let disp: Vec<(f64, f64)> = series(records, "dispersive_besov").into_iter().map(|(t, v)| (t, v * v)).collect();
    let e = low.iter().map(|p| p.1).fold(0.0, f64::max) + trapezoid(&high);
    (e, trapezoid(&disp).sqrt())
}

fn run_one(cfg: &ExperimentConfig, s: &Setup, kappa: f64, spec: &DiagnosticsSpec) -> Result<RunOutcome> {
    let integ = Integrator::new(&s.grid, &s.closure, kappa, &cfg.integrator.build())?;
    let initial = initial_state(cfg, &s.grid, kappa);
    Ok(dynamics::run_simulation(initial, &s.closure, &integ, cfg.experiment.horizon, spec, &s.bank, |_| {}))
}

pub fn limit_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let s = setup(cfg)?;
    let e = &cfg.experiment;
    let d = s.grid.dim();
    let delta = delta_for(d, e.p);
    let spec = DiagnosticsSpec {
        energy: true,
        dispersive_p: Some(e.p),
        reference_error: true,
        derivatives: Vec::new(),
        lyapunov_delta1: None,
        means: true,
    };
    let runs: Vec<(f64, Result<RunOutcome>)> =
        e.kappas.par_iter().map(|&k| (k, run_one(cfg, &s, k, &spec))).collect();
    let mut rep = new_report("limit-sweep", cfg);
    let mut es = Vec::new();
    let mut ds = Vec::new();
    for (kappa, run) in runs {
        let id = format!("kappa={kappa}");
        match run {
            Err(err) => rep.fail_run(&id, err),
            Ok(out) => {
                push_records(&mut rep, &id, kappa, &out.records);
                if let Some(f) = out.failure {
                    rep.fail_run(&id, f);
                    continue;
                }
                let (ev, dv) = limit_observables(&out.records);
                rep.record(&id, kappa, e.horizon, "E", ev);
                rep.record(&id, kappa, e.horizon, "D", dv);
                es.push((kappa, ev));
                ds.push((kappa, dv));
            }
        }
    }
    let bound = -cfg.thresholds.limit_slope_factor * delta;
    for (name, pts) in [("E", &es), ("D", &ds)] {
        let monotone = pts.len() == e.kappas.len() && pts.windows(2).all(|w| w[1].1 < w[0].1);
        rep.verdicts.push(Verdict::flag(format!("{name}_monotone"), monotone));
        match fit_loglog_rate(pts, None) {
            Ok(fit) => rep.verdicts.push(Verdict::from_fit(format!("{name}_slope"), fit, Rule::AtMost { bound })),
            Err(err) => rep.fail_run(&format!("{name}_fit"), err),
        }
    }
    Ok(rep)
}

fn alpha_name(alpha: &[u32]) -> String {
    format!("d_{}", alpha.iter().map(|a| a.to_string()).collect::<String>())
}

/// Fits `−log ‖D^α w‖ / log t` in `window` and adds one verdict per `α`.
fn decay_verdicts(
    rep: &mut ExperimentReport,
    prefix: &str,
    records: &[DiagnosticRecord],
    alphas: &[Vec<u32>],
    sigma1: f64,
    window: [f64; 2],
    rel: f64,
) -> Result<()> {
    for alpha in alphas {
        let name = alpha_name(alpha);
        let pts = series(records, &name);
        let found = pts.iter().filter(|(t, _)| *t >= window[0] && *t <= window[1]).count();
        if found < MIN_WINDOW_SNAPSHOTS {
            return Err(HarnessError::WindowTooShort {
                found,
                needed: MIN_WINDOW_SNAPSHOTS,
                t0: window[0],
                t1: window[1],
            });
        }
        let mut fit = fit_loglog_rate(&pts, Some(window))?;
        fit.slope = -fit.slope;
        let order: u32 = alpha.iter().sum();
        let target = (order as f64 - sigma1) / 2.0;
        rep.verdicts.push(Verdict::from_fit(format!("{prefix}_{name}"), fit, Rule::WithinRel { target, rel }));
    }
    Ok(())
}

/// Decay window `[0.2Λ², 0.8Λ²]` unless the config sets one.
pub fn decay_window(cfg: &ExperimentConfig) -> [f64; 2] {
    let l2 = cfg.grid.lambda * cfg.grid.lambda;
    cfg.experiment.window.unwrap_or([0.2 * l2, 0.8 * l2])
}

pub fn decay_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let s = setup(cfg)?;
    let e = &cfg.experiment;
    let window = decay_window(cfg);
    let horizon = e.horizon.max(window[1]);
    let kappa = e.kappa;
    let fields = decay_data(&s.grid, kappa, e.sigma1, e.amplitude, e.seed)?;
    let spec = DiagnosticsSpec {
        energy: false,
        dispersive_p: None,
        reference_error: false,
        derivatives: e.alphas.clone(),
        lyapunov_delta1: None,
        means: false,
    };
    let mut rep = new_report("decay-sweep", cfg);

    // Heat control: the same data and observables under e^{tΔ}.
    let icfg = cfg.integrator.build();
    let steps = (horizon / icfg.dt - 1e-9).ceil() as u64;
    let control: Vec<Result<DiagnosticRecord>> = (0..=steps)
        .filter(|k| k % icfg.snapshot_every as u64 == 0 || *k == steps)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * icfg.dt;
            let mut st = SimulationState::new(kappa, heat_flow(&fields, t), false);
            st.t = t;
            st.step = k;
            Ok(dynamics::record_diagnostics(&st, &s.closure, None, &s.bank, &spec, icfg.dt)?)
        })
        .collect();
    let control: Vec<DiagnosticRecord> = control.into_iter().collect::<Result<_>>()?;
    push_records(&mut rep, "heat", kappa, &control);
    decay_verdicts(&mut rep, "heat", &control, &e.alphas, e.sigma1, window, cfg.thresholds.heat_rel)?;

    let integ = Integrator::new(&s.grid, &s.closure, kappa, &icfg)?;
    let out = dynamics::run_simulation(
        SimulationState::new(kappa, fields, false),
        &s.closure,
        &integ,
        horizon,
        &spec,
        &s.bank,
        |_| {},
    );
    push_records(&mut rep, "twofluid", kappa, &out.records);
    if let Some(f) = out.failure {
        rep.fail_run("twofluid", f);
        return Ok(rep);
    }
    decay_verdicts(&mut rep, "decay", &out.records, &e.alphas, e.sigma1, window, cfg.thresholds.decay_rel)?;
    Ok(rep)
}

/// Linear run of the configured closure; the fitted exponential rate of
/// `‖(κ^{-1/2}n, ∇n, u)‖` is compared with the largest real part of the
/// symbol over the lattice.
pub fn growth_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let s = setup(cfg)?;
    let e = &cfg.experiment;
    let beta = s.closure.equilibrium_betas()?;
    let radii = spectral::lattice_radii(&s.grid, s.grid.nyquist() * (s.grid.dim() as f64).sqrt());
    let (rate, k) = generator_growth(&radii, e.kappa, &beta);
    let mut icfg = cfg.integrator.build();
    icfg.nonlinear = false;
    let coeffs = match ClosureCoefficients::from_betas(beta) {
        Ok(c) => c,
        // Complex roots: the propagator falls back to the full exponential.
        Err(_) => ClosureCoefficients {
            beta,
            r_plus: f64::NAN,
            r_minus: f64::NAN,
            stability_margin: f64::NAN,
            stable: false,
        },
    };
    let integ = Integrator::with_coefficients(&s.grid, &s.closure, &coeffs, e.kappa, &icfg)?;
    let state = SimulationState::new(e.kappa, random_data(&s.grid, e.amplitude, e.seed)?, false);
    let spec = DiagnosticsSpec {
        energy: true,
        means: false,
        ..DiagnosticsSpec::default()
    };
    let out = dynamics::run_simulation(state, &s.closure, &integ, e.horizon, &spec, &s.bank, |_| {});
    let mut rep = new_report("growth", cfg);
    rep.record("symbol", e.kappa, k, "max_growth_rate", rate);
    push_records(&mut rep, "linear", e.kappa, &out.records);
    if let Some(f) = out.failure {
        rep.fail_run("linear", f);
        return Ok(rep);
    }
    let window = e.window.unwrap_or([0.5 * e.horizon, e.horizon]);
    let fit = fit_exponential_rate(&series(&out.records, "energy_l2"), Some(window))?;
    rep.verdicts.push(Verdict::flag("growing_mode", rate > 0.0));
    rep.verdicts.push(Verdict::from_fit(
        "growth_rate",
        fit,
        Rule::WithinRel { target: rate, rel: cfg.thresholds.growth_rel },
    ));
    Ok(rep)
}

/// Scans `f′(1)` over the configured range. Growth on the lattice may only
/// occur outside the stability window; below the window the roots stay
/// positive and the symbol does not grow, so the check is one-sided. An
/// unstable configured closure also gets a growth check.
pub fn stability_scan(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let s = setup(cfg)?;
    let e = &cfg.experiment;
    let radii = spectral::lattice_radii(&s.grid, s.grid.nyquist() * (s.grid.dim() as f64).sqrt());
    let low = s.closure.stability_margin()?.window_low;
    let [a, b] = e.window.unwrap_or([1.5 * low, 0.5 * low.abs()]);
    let n = e.samples.max(2);
    let mut rep = new_report("stability-scan", cfg);
    let mut consistent = true;
    for i in 0..n {
        let fp = a + (b - a) * i as f64 / (n - 1) as f64;
        let mut spec = cfg.closure.clone();
        spec.fprime = fp;
        let m = spec.build()?;
        let stable = m.stability_margin()?.stable;
        let beta = m.equilibrium_betas()?;
        let (rate, _) = generator_growth(&radii, e.kappa, &beta);
        rep.record("scan", e.kappa, fp, "max_growth_rate", rate);
        rep.record("scan", e.kappa, fp, "stable", if stable { 1.0 } else { 0.0 });
        rep.record("scan", e.kappa, fp, "min_beta", beta.iter().cloned().fold(f64::INFINITY, f64::min));
        consistent &= !(stable && rate > 0.0);
    }
    rep.verdicts.push(Verdict::flag("no_growth_inside_window", consistent));
    if !s.closure.stability_margin()?.stable {
        let growth = growth_check(cfg)?;
        rep.records.extend(growth.records);
        rep.verdicts.extend(growth.verdicts);
        rep.failures.extend(growth.failures);
        rep.partial |= growth.partial;
    }
    Ok(rep)
}

/// Lyapunov structure under the linear flow: Gram positivity with the
/// selected `δ₁`, `Σ_j E_j` non-increasing step by step, and per-block decay
/// at least `lyapunov_factor · c₀(3/4)²2^{2j}`.
pub fn lyapunov_check(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let s = setup(cfg)?;
    let e = &cfg.experiment;
    let th = &cfg.thresholds;
    let kappa = e.kappa;
    let coeffs = s.closure.equilibrium_coefficients()?;
    let radii = spectral::lattice_radii(&s.grid, s.grid.nyquist() * (s.grid.dim() as f64).sqrt());
    let lc = spectral::select_delta1(&radii, kappa, &coeffs)?;
    let mut rep = new_report("lyapunov", cfg);
    for (name, v) in [("delta1", lc.delta1), ("lower", lc.lower), ("upper", lc.upper), ("c0", lc.c0)] {
        rep.record("constants", kappa, 0.0, name, v);
    }
    rep.verdicts.push(Verdict::new("gram_lower", lc.lower, Rule::AtLeast { bound: f64::MIN_POSITIVE }));
    let data = random_data(&s.grid, e.amplitude, e.seed)?;
    let energies = |f: &TwoFluidFields| -> Result<Vec<f64>> {
        s.bank
            .range()
            .map(|j| Ok(spectral::lyapunov_energy(f, &s.bank, j, &coeffs, kappa, lc.delta1)?))
            .collect()
    };

    let mut icfg = cfg.integrator.build();
    icfg.nonlinear = false;
    let integ = Integrator::new(&s.grid, &s.closure, kappa, &icfg)?;
    let mut state = SimulationState::new(kappa, data.clone(), false);
    let mut prev: f64 = energies(&state.fields)?.iter().sum();
    let mut worst_rise = f64::NEG_INFINITY;
    let steps = (e.horizon / icfg.dt).ceil() as usize;
    for _ in 0..steps {
        state = integ.step(&state)?;
        let total: f64 = energies(&state.fields)?.iter().sum();
        rep.record("total", kappa, state.t, "lyapunov_total", total);
        worst_rise = worst_rise.max((total - prev) / prev);
        prev = total;
    }
    rep.verdicts.push(Verdict::new("total_nonincreasing", worst_rise, Rule::AtMost { bound: th.identity_rel }));

    // Block j decays at least like e^{-c₀(3/4)²4^j t}; each block gets its
    // own step so the fit spans a few guaranteed e-folds.
    let c0_block = 0.75f64.powi(2) * lc.c0;
    let samples = 64;
    let mut worst_ratio = f64::INFINITY;
    for (idx, j) in s.bank.range().enumerate() {
        let rate_min = c0_block * 4f64.powi(j);
        let span = 4.0 / rate_min;
        let mut bcfg = icfg.clone();
        bcfg.dt = span / samples as f64;
        let integ = Integrator::new(&s.grid, &s.closure, kappa, &bcfg)?;
        let mut st = SimulationState::new(kappa, data.clone(), false);
        let mut pts = vec![(0.0, energies(&st.fields)?[idx])];
        for _ in 0..samples {
            st = integ.step(&st)?;
            pts.push((st.t, spectral::lyapunov_energy(&st.fields, &s.bank, j, &coeffs, kappa, lc.delta1)?));
        }
        pts.retain(|p| p.1 > 0.0);
        let fit = fit_exponential_rate(&pts, None)?;
        rep.record(&format!("block_{j}"), kappa, span, "decay_rate", -fit.slope);
        rep.record(&format!("block_{j}"), kappa, span, "required_rate", th.lyapunov_factor * rate_min);
        let ratio = -fit.slope / rate_min;
        worst_ratio = worst_ratio.min(ratio);
    }
    rep.verdicts.push(Verdict::new("block_decay", worst_ratio, Rule::AtLeast { bound: th.lyapunov_factor }));
    Ok(rep)
}

/// Dispatches on `experiment.kind` for the kinds that need no extra input.
pub fn run_configured(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    use crate::config::ExperimentKind::*;
    match cfg.experiment.kind {
        LimitSweep => limit_sweep(cfg),
        DecaySweep => decay_sweep(cfg),
        Dispersion => dispersion(cfg),
        StabilityScan => stability_scan(cfg),
        Simulate => Err(HarnessError::Config("simulate needs an output directory".into())),
    }
}
