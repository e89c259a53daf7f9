//! Experiment configuration files.
//!
//! A config is a TOML document with four sections, `closure`, `grid`,
//! `integrator` and `experiment`, plus optional verdict `thresholds`:
//!
//! ```toml
//! [closure]
//! gamma_plus = 1.0
//! gamma_minus = 1.0
//! alpha_plus = 0.5
//! fprime = -1.0
//! profile = "constant"      # or "power" / "saturating" with profile_parameter
//!
//! [grid]
//! dim = 2
//! points = 256
//! lambda = 16.0
//!
//! [integrator]
//! scheme = "etdrk2"
//! dt = 0.01
//!
//! [experiment]
//! kind = "limit-sweep"
//! kappas = [16.0, 64.0, 256.0, 1024.0]
//! p = 4.0
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use twofluid_core::closure::{CapillarityProfile, ClosureModel, PressureLaw};
use twofluid_core::dynamics::{IntegratorConfig, Scheme};
use twofluid_core::grid::Grid;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub closure: ClosureSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Constant,
    Power,
    Saturating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosureSpec {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub amplitude_plus: f64,
    pub amplitude_minus: f64,
    pub alpha_plus: f64,
    pub fprime: f64,
    pub profile: ProfileKind,
    /// Exponent for `power`, saturation constant for `saturating`.
    pub profile_parameter: f64,
}

impl Default for ClosureSpec {
    fn default() -> Self {
        Self {
            gamma_plus: 1.0,
            gamma_minus: 1.0,
            amplitude_plus: 1.0,
            amplitude_minus: 1.0,
            alpha_plus: 0.5,
            fprime: -1.0,
            profile: ProfileKind::Constant,
            profile_parameter: 0.0,
        }
    }
}

impl ClosureSpec {
    pub fn build(&self) -> Result<ClosureModel> {
        let profile = match self.profile {
            ProfileKind::Constant => CapillarityProfile::constant(),
            ProfileKind::Power => CapillarityProfile::Power {
                exponent: self.profile_parameter,
            },
            ProfileKind::Saturating => CapillarityProfile::Saturating {
                c: self.profile_parameter,
            },
        };
        Ok(ClosureModel::new(
            PressureLaw::gamma(self.amplitude_plus, self.gamma_plus),
            PressureLaw::gamma(self.amplitude_minus, self.gamma_minus),
            self.fprime,
            profile,
            self.alpha_plus,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub dim: usize,
    pub points: usize,
    pub lambda: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            dim: 2,
            points: 256,
            lambda: 16.0,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<Grid>> {
        Ok(Grid::new(self.dim, self.points, self.lambda)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSpec {
    pub scheme: SchemeName,
    pub dt: f64,
    pub cfl_safety: f64,
    pub snapshot_every: usize,
    pub nonlinear: bool,
    pub alias_check_every: usize,
    /// Steps between checkpoints written by `simulate` (0 disables them).
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Etd1,
    Etdrk2,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Etdrk2,
            dt: 0.01,
            cfl_safety: 0.5,
            snapshot_every: 10,
            nonlinear: true,
            alias_check_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl IntegratorSpec {
    pub fn build(&self) -> IntegratorConfig {
        IntegratorConfig {
            scheme: match self.scheme {
                SchemeName::Etd1 => Scheme::Etd1,
                SchemeName::Etdrk2 => Scheme::Etdrk2,
            },
            dt: self.dt,
            cfl_safety: self.cfl_safety,
            snapshot_every: self.snapshot_every,
            nonlinear: self.nonlinear,
            alias_check_every: self.alias_check_every,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LimitSweep,
    DecaySweep,
    Dispersion,
    StabilityScan,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Capillarity for single runs.
    pub kappa: f64,
    /// Capillarities for sweeps, strictly increasing.
    pub kappas: Vec<f64>,
    /// Dispersive Lebesgue exponent.
    pub p: f64,
    /// Low-frequency regularity of decay-sweep data.
    pub sigma1: f64,
    /// Multi-indices `α` for derivative decay.
    pub alphas: Vec<Vec<u32>>,
    pub horizon: f64,
    pub seed: u64,
    /// Size of the initial perturbation.
    pub amplitude: f64,
    /// Width of the Gaussian envelope of sweep data, in box units `Λ`.
    pub envelope: f64,
    /// Fit window; `None` selects the default for the experiment.
    pub window: Option<[f64; 2]>,
    /// Dyadic block of dispersion data.
    pub block: i32,
    /// Number of time samples for dispersion and growth fits.
    pub samples: usize,
    /// `‖Pu(0) − v(0)‖` relative to `‖Pu(0)‖`, as a multiple of `κ^{-δ}`.
    pub discrepancy: f64,
    /// Use the viscous semigroup in the dispersion experiment.
    pub viscous: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Simulate,
            kappa: 16.0,
            kappas: vec![16.0, 64.0, 256.0, 1024.0],
            p: 4.0,
            sigma1: -1.0,
            alphas: vec![vec![1, 0], vec![2, 0]],
            horizon: 2.0,
            seed: 1,
            amplitude: 1.0,
            envelope: 0.25,
            window: None,
            block: 0,
            samples: 32,
            discrepancy: 0.0,
            viscous: false,
        }
    }
}

/// Verdict tolerances; the defaults are the acceptance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub eigen_abs: f64,
    pub identity_rel: f64,
    pub partition_abs: f64,
    pub reconstruction_rel: f64,
    pub bernstein_max: f64,
    pub dispersion_rel: f64,
    pub growth_rel: f64,
    /// Required limit-sweep slope as a multiple of `−δ`.
    pub limit_slope_factor: f64,
    pub decay_rel: f64,
    pub heat_rel: f64,
    /// Required fraction of `c₀2^{2j}` in the block decay check.
    pub lyapunov_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            eigen_abs: 1e-9,
            identity_rel: 1e-12,
            partition_abs: 1e-12,
            reconstruction_rel: 1e-10,
            bernstein_max: 10.0,
            dispersion_rel: 0.10,
            growth_rel: 0.05,
            limit_slope_factor: 0.5,
            decay_rel: 0.15,
            heat_rel: 0.05,
            lyapunov_factor: 0.8,
        }
    }
}

/// `δ(p)`: `¼(1 − 2/p)` for `d = 2`, `¼(d/2 − d/p)` for `d ≥ 3`.
pub fn delta_for(d: usize, p: f64) -> f64 {
    if d == 2 {
        0.25 * (1.0 - 2.0 / p)
    } else {
        0.25 * (d as f64 / 2.0 - d as f64 / p)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization; changes with any field.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let d = self.grid.dim;
        let e = &self.experiment;
        if !(2..=3).contains(&d) {
            return bad(format!("grid.dim must be 2 or 3, got {d}"));
        }
        if !(self.integrator.dt > 0.0) {
            return bad(format!("integrator.dt must be positive, got {}", self.integrator.dt));
        }
        if self.integrator.snapshot_every == 0 {
            return bad("integrator.snapshot_every must be at least 1".into());
        }
        if matches!(e.kind, ExperimentKind::LimitSweep | ExperimentKind::DecaySweep) {
            let ks = if e.kind == ExperimentKind::LimitSweep { &e.kappas } else { &e.kappas[..0] };
            if e.kind == ExperimentKind::LimitSweep
                && (ks.len() < 3 || ks.windows(2).any(|w| !(w[1] > w[0])) || ks[0] <= 0.0)
            {
                return bad(format!("experiment.kappas must be positive, strictly increasing, at least 3 entries: {ks:?}"));
            }
        }
        if e.kind == ExperimentKind::LimitSweep {
            let ok = if d == 2 {
                e.p > 2.0 && e.p.is_finite()
            } else {
                e.p > 2.0 && e.p <= 2.0 * d as f64 / (d as f64 - 2.0)
            };
            if !ok {
                return bad(format!("experiment.p = {} outside the admissible range for d = {d}", e.p));
            }
        }
        if e.kind == ExperimentKind::DecaySweep {
            let lo = -(d as f64) / 2.0;
            let hi = d as f64 / 2.0 - 1.0;
            if !(e.sigma1 >= lo && e.sigma1 < hi) {
                return bad(format!("experiment.sigma1 = {} outside [{lo}, {hi})", e.sigma1));
            }
            if e.alphas.is_empty() || e.alphas.iter().any(|a| a.len() != d) {
                return bad("experiment.alphas must list multi-indices of length d".into());
            }
            if let Some(a) = e.alphas.iter().find(|a| (a.iter().sum::<u32>() as f64) <= e.sigma1) {
                return bad(format!("multi-index {a:?} must have order above sigma1"));
            }
        }
        if !(e.kappa > 0.0) {
            return bad(format!("experiment.kappa must be positive, got {}", e.kappa));
        }
        if let Some([a, b]) = e.window {
            if !(a > 0.0 && b > a) {
                return bad(format!("experiment.window must satisfy 0 < t0 < t1, got [{a}, {b}]"));
            }
        }
        if e.discrepancy < 0.0 {
            return bad("experiment.discrepancy must be nonnegative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_examples() {
        assert_eq!(delta_for(2, 4.0), 0.125);
        assert_eq!(delta_for(3, 6.0), 0.25);
    }

    #[test]
    fn parse_and_validate() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            [closure]
            fprime = -0.5
            [grid]
            points = 64
            lambda = 4.0
            [experiment]
            kind = "limit-sweep"
            kappas = [16.0, 64.0, 256.0]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.grid.points, 64);
        assert_eq!(cfg.closure.fprime, -0.5);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert!(ExperimentConfig::from_toml("[experiment]\nkind = \"limit-sweep\"\nkappas = [16.0, 8.0, 32.0]").is_err());
        assert!(ExperimentConfig::from_toml("[experiment]\nkind = \"decay-sweep\"\nsigma1 = 0.0").is_err());
        assert!(ExperimentConfig::from_toml("[grid]\nbogus = 1").is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = ExperimentConfig::from_toml("").unwrap();
        let mut b = a.clone();
        b.thresholds.growth_rel = 0.06;
        let mut c = a.clone();
        c.experiment.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }
}
