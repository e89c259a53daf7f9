//! Algebraic closure of the non-conservative two-fluid model.
//!
//! Given two pressure laws `P±`, a capillary pressure `f` and a capillarity
//! profile `m`, the fraction densities `R± = α±ρ±` determine the full mixture
//! state `(ρ±, α±, s±², C²)` through the implicit pressure balance
//! `P⁺(ρ⁺) − P⁻(ρ⁻) = f(R⁻)`. Everything is expressed in normalized units in
//! which the equilibrium fraction densities equal one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature;

/// Lower end of the admissible density range (normalized units).
pub const DENSITY_MIN: f64 = 1e-3;
/// Upper end of the admissible density range (normalized units).
pub const DENSITY_MAX: f64 = 1e6;

/// Separation of the characteristic roots below which the diagonalizing
/// combinations are considered singular.
pub const ROOT_SEPARATION_MIN: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosureError {
    #[error("pressure balance has no sign change on ({lo}, {hi})")]
    NoBracket { lo: f64, hi: f64 },
    #[error("pressure balance is not increasing at rho+ = {at} (slope {slope})")]
    NonMonotone { at: f64, slope: f64 },
    #[error("characteristic roots are complex or coincide (discriminant {discriminant})")]
    DegenerateRoots { discriminant: f64 },
    #[error("value {value} lies outside the working range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("invalid closure model: {0}")]
    InvalidModel(String),
}

pub type Result<T> = std::result::Result<T, ClosureError>;

/// Monotone cubic Hermite interpolant of a tabulated pressure law.
///
/// Slopes follow the Fritsch-Carlson limiter, so the interpolant is monotone
/// and C¹; outside the table it is continued linearly with the end slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedLaw {
    density: Vec<f64>,
    pressure: Vec<f64>,
    slope: Vec<f64>,
}

impl TabulatedLaw {
    pub fn new(density: Vec<f64>, pressure: Vec<f64>) -> Result<Self> {
        let n = density.len();
        if n < 2 || pressure.len() != n {
            return Err(ClosureError::InvalidModel(
                "tabulated law needs at least two (density, pressure) pairs".into(),
            ));
        }
        for i in 1..n {
            if density[i] <= density[i - 1] {
                return Err(ClosureError::InvalidModel(
                    "tabulated densities must be strictly increasing".into(),
                ));
            }
            if pressure[i] <= pressure[i - 1] {
                return Err(ClosureError::InvalidModel(
                    "tabulated pressure must be strictly increasing".into(),
                ));
            }
        }
        let secant: Vec<f64> = (0..n - 1)
            .map(|i| (pressure[i + 1] - pressure[i]) / (density[i + 1] - density[i]))
            .collect();
        let mut slope = vec![0.0; n];
        slope[0] = secant[0];
        slope[n - 1] = secant[n - 2];
        for i in 1..n - 1 {
            slope[i] = 0.5 * (secant[i - 1] + secant[i]);
        }
        for i in 0..n - 1 {
            let a = slope[i] / secant[i];
            let b = slope[i + 1] / secant[i];
            let norm = a * a + b * b;
            if norm > 9.0 {
                let tau = 3.0 / norm.sqrt();
                slope[i] = tau * a * secant[i];
                slope[i + 1] = tau * b * secant[i];
            }
        }
        Ok(Self {
            density,
            pressure,
            slope,
        })
    }

    fn locate(&self, s: f64) -> usize {
        match self
            .density
            .binary_search_by(|probe| probe.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(self.density.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.density.len() - 2),
        }
    }

    fn eval(&self, s: f64) -> (f64, f64) {
        let n = self.density.len();
        if s <= self.density[0] {
            return (
                self.pressure[0] + self.slope[0] * (s - self.density[0]),
                self.slope[0],
            );
        }
        if s >= self.density[n - 1] {
            return (
                self.pressure[n - 1] + self.slope[n - 1] * (s - self.density[n - 1]),
                self.slope[n - 1],
            );
        }
        let i = self.locate(s);
        let h = self.density[i + 1] - self.density[i];
        let t = (s - self.density[i]) / h;
        let (p0, p1) = (self.pressure[i], self.pressure[i + 1]);
        let (m0, m1) = (self.slope[i] * h, self.slope[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1;
        let deriv = ((6.0 * t2 - 6.0 * t) * p0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * p1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h;
        (value, deriv)
    }
}

/// Pressure law of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PressureLaw {
    /// `P(s) = amplitude · s^gamma`.
    Gamma { amplitude: f64, gamma: f64 },
    Tabulated(TabulatedLaw),
}

impl PressureLaw {
    pub fn gamma(amplitude: f64, gamma: f64) -> Self {
        PressureLaw::Gamma { amplitude, gamma }
    }

    pub fn pressure(&self, s: f64) -> f64 {
        match self {
            PressureLaw::Gamma { amplitude, gamma } => amplitude * s.powf(*gamma),
            PressureLaw::Tabulated(t) => t.eval(s).0,
        }
    }

    /// Squared sound speed `P′(s)`.
    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            PressureLaw::Gamma { amplitude, gamma } => amplitude * gamma * s.powf(gamma - 1.0),
            PressureLaw::Tabulated(t) => t.eval(s).1,
        }
    }

    fn validate(&self) -> Result<()> {
        if let PressureLaw::Gamma { amplitude, gamma } = self {
            if !(*amplitude > 0.0) || !(*gamma >= 1.0) {
                return Err(ClosureError::InvalidModel(format!(
                    "gamma law needs amplitude > 0 and gamma >= 1 (got {amplitude}, {gamma})"
                )));
            }
        }
        // Sampled monotonicity over the working range.
        for k in 0..=90 {
            let s = DENSITY_MIN * 10f64.powf(k as f64 / 10.0);
            let d = self.derivative(s);
            if !(d > 0.0) || !d.is_finite() {
                return Err(ClosureError::InvalidModel(format!(
                    "pressure law is not increasing at s = {s} (P' = {d})"
                )));
            }
        }
        Ok(())
    }
}

/// Capillary pressure `f`, a cubic polynomial in `(s − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapillaryPressure {
    /// Coefficients of `1, (s−1), (s−1)², (s−1)³`.
    pub coeffs: [f64; 4],
}

impl CapillaryPressure {
    pub fn linear(offset: f64, slope: f64) -> Self {
        Self {
            coeffs: [offset, slope, 0.0, 0.0],
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        let x = s - 1.0;
        let [c0, c1, c2, c3] = self.coeffs;
        c0 + x * (c1 + x * (c2 + x * c3))
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let x = s - 1.0;
        let [_, c1, c2, c3] = self.coeffs;
        c1 + x * (2.0 * c2 + 3.0 * c3 * x)
    }

    /// `f′(1)`, the slope that decides linear stability.
    pub fn slope_at_equilibrium(&self) -> f64 {
        self.coeffs[1]
    }
}

/// Capillarity profile `m` with `m(1) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CapillarityProfile {
    /// `m(s) = s^exponent`; `exponent = 0` is the constant profile.
    Power { exponent: f64 },
    /// `m(s) = (1 + c) / (1 + c s)`, no closed-form fluctuation map.
    Saturating { c: f64 },
}

impl CapillarityProfile {
    pub fn constant() -> Self {
        CapillarityProfile::Power { exponent: 0.0 }
    }

    pub fn m(&self, s: f64) -> f64 {
        match *self {
            CapillarityProfile::Power { exponent } => {
                if exponent == 0.0 {
                    1.0
                } else {
                    s.powf(exponent)
                }
            }
            CapillarityProfile::Saturating { c } => (1.0 + c) / (1.0 + c * s),
        }
    }

    pub fn m_prime(&self, s: f64) -> f64 {
        match *self {
            CapillarityProfile::Power { exponent } => {
                if exponent == 0.0 {
                    0.0
                } else {
                    exponent * s.powf(exponent - 1.0)
                }
            }
            CapillarityProfile::Saturating { c } => -(1.0 + c) * c / ((1.0 + c * s) * (1.0 + c * s)),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CapillarityProfile::Power { exponent } if exponent.is_finite() && exponent > -1.0 => {
                Ok(())
            }
            CapillarityProfile::Saturating { c } if c.is_finite() && c >= 0.0 => Ok(()),
            other => Err(ClosureError::InvalidModel(format!(
                "unsupported capillarity profile {other:?}"
            ))),
        }
    }

    fn integrand(&self, tau: f64) -> f64 {
        (self.m(tau) / tau).sqrt()
    }

    /// `L(R) = ∫₁^R √(m(τ)/τ) dτ` in closed form, when one exists.
    fn forward_closed_form(&self, r: f64) -> Option<f64> {
        match *self {
            CapillarityProfile::Power { exponent } => {
                let h = 0.5 * (exponent + 1.0);
                Some((r.powf(h) - 1.0) / h)
            }
            CapillarityProfile::Saturating { .. } => None,
        }
    }

    fn inverse_closed_form(&self, y: f64) -> Option<f64> {
        match *self {
            CapillarityProfile::Power { exponent } => {
                let h = 0.5 * (exponent + 1.0);
                let base = 1.0 + h * y;
                Some(if base > 0.0 { base.powf(1.0 / h) } else { 0.0 })
            }
            CapillarityProfile::Saturating { .. } => None,
        }
    }

    /// Density fluctuation map `L(R)`; closed form for power profiles,
    /// adaptive quadrature otherwise.
    pub fn fluctuation_forward(&self, r: f64) -> Result<f64> {
        check_density(r)?;
        Ok(match self.forward_closed_form(r) {
            Some(v) => v,
            None => self.fluctuation_forward_quadrature(r),
        })
    }

    /// `L(R)` by adaptive Gauss-Kronrod quadrature regardless of profile.
    pub fn fluctuation_forward_quadrature(&self, r: f64) -> f64 {
        quadrature::integrate(|t| self.integrand(t), 1.0, r, 1e-15, 1e-15)
    }

    /// Inverse of [`fluctuation_forward`](Self::fluctuation_forward).
    pub fn fluctuation_inverse(&self, y: f64) -> Result<f64> {
        let y_lo = self.fluctuation_forward(DENSITY_MIN)?;
        let y_hi = self.fluctuation_forward(DENSITY_MAX)?;
        if !(y >= y_lo && y <= y_hi) {
            return Err(ClosureError::OutOfRange {
                value: y,
                lo: y_lo,
                hi: y_hi,
            });
        }
        if let Some(r) = self.inverse_closed_form(y) {
            return Ok(r);
        }
        // Safeguarded Newton on the increasing map R ↦ L(R) − y.
        let (mut lo, mut hi) = (DENSITY_MIN, DENSITY_MAX);
        let mut r = 1.0f64.max(lo).min(hi);
        for _ in 0..200 {
            let g = self.fluctuation_forward_quadrature(r) - y;
            if g == 0.0 {
                return Ok(r);
            }
            if g < 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            let mut next = r - g / self.integrand(r);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - r).abs() <= 1e-15 * r.max(1.0) || hi - lo <= 4.0 * f64::EPSILON * r {
                return Ok(next);
            }
            r = next;
        }
        Ok(r)
    }
}

fn check_density(r: f64) -> Result<()> {
    if !(DENSITY_MIN..=DENSITY_MAX).contains(&r) {
        return Err(ClosureError::OutOfRange {
            value: r,
            lo: DENSITY_MIN,
            hi: DENSITY_MAX,
        });
    }
    Ok(())
}

/// Composite profiles `ψ̃, Q̃, φ̃` evaluated at a fluctuation value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeProfiles {
    pub psi: f64,
    pub q: f64,
    pub phi: f64,
}

impl CompositeProfiles {
    pub fn at_density(profile: &CapillarityProfile, r: f64) -> Self {
        Self {
            psi: (r * profile.m(r)).sqrt() - 1.0,
            q: 1.0 / r - 1.0,
            phi: r - 1.0,
        }
    }
}

/// Full closure: two pressure laws, capillary pressure, capillarity profile
/// and the equilibrium volume fraction of the `+` phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureModel {
    pub plus: PressureLaw,
    pub minus: PressureLaw,
    pub capillary: CapillaryPressure,
    pub profile: CapillarityProfile,
    pub alpha_plus: f64,
}

/// Mixture state determined by a pair of fraction densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub r_plus: f64,
    pub r_minus: f64,
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub s2_plus: f64,
    pub s2_minus: f64,
    pub c2: f64,
}

/// Equilibrium coefficients of the linearized pressure coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosureCoefficients {
    pub beta: [f64; 4],
    pub r_plus: f64,
    pub r_minus: f64,
    pub stability_margin: f64,
    pub stable: bool,
}

impl ClosureCoefficients {
    /// `β₁β₄ − β₂β₃`, the product of the characteristic roots.
    pub fn determinant(&self) -> f64 {
        let [b1, b2, b3, b4] = self.beta;
        b1 * b4 - b2 * b3
    }

    /// Builds coefficients directly from a β table; the roots follow from the
    /// characteristic polynomial `r² − (β₁+β₄)r + β₁β₄ − β₂β₃`.
    pub fn from_betas(beta: [f64; 4]) -> Result<Self> {
        let [b1, b2, b3, b4] = beta;
        let disc = (b1 - b4) * (b1 - b4) + 4.0 * b2 * b3;
        if !(disc >= 0.0) {
            return Err(ClosureError::DegenerateRoots { discriminant: disc });
        }
        let sq = disc.sqrt();
        let sum = b1 + b4;
        let r_plus = 0.5 * (sum + sq);
        // Product form avoids cancellation in the smaller root.
        let prod = b1 * b4 - b2 * b3;
        let r_minus = if r_plus != 0.0 {
            prod / r_plus
        } else {
            0.5 * (sum - sq)
        };
        Ok(Self {
            beta,
            r_plus,
            r_minus,
            stability_margin: f64::NAN,
            stable: false,
        })
    }

    /// Fails when the roots are too close to separate the two decoupled blocks.
    pub fn check_separated(&self) -> Result<()> {
        let gap = self.r_plus - self.r_minus;
        if !(gap.abs() >= ROOT_SEPARATION_MIN) {
            return Err(ClosureError::DegenerateRoots {
                discriminant: gap * gap,
            });
        }
        Ok(())
    }
}

/// Stability window of `f′(1)` and the verdict for a given model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub window_low: f64,
    pub window_high: f64,
    pub fprime: f64,
    pub stable: bool,
    /// Distance to the nearest window end; negative outside the window.
    pub margin: f64,
}

impl ClosureModel {
    /// Model with linear capillary pressure `f(s) = f₀ + f′(1)(s − 1)`, where
    /// the offset `f₀` is fixed by equilibrium consistency.
    pub fn new(
        plus: PressureLaw,
        minus: PressureLaw,
        fprime_one: f64,
        profile: CapillarityProfile,
        alpha_plus: f64,
    ) -> Result<Self> {
        Self::with_capillary(
            plus,
            minus,
            [f64::NAN, fprime_one, 0.0, 0.0],
            profile,
            alpha_plus,
        )
    }

    /// Model with cubic capillary pressure; a NaN offset coefficient is
    /// replaced by the equilibrium-consistent value, a finite one is checked.
    pub fn with_capillary(
        plus: PressureLaw,
        minus: PressureLaw,
        mut coeffs: [f64; 4],
        profile: CapillarityProfile,
        alpha_plus: f64,
    ) -> Result<Self> {
        if !(alpha_plus > 0.0 && alpha_plus < 1.0) {
            return Err(ClosureError::InvalidModel(format!(
                "equilibrium fraction must lie in (0, 1), got {alpha_plus}"
            )));
        }
        plus.validate()?;
        minus.validate()?;
        profile.validate()?;
        if coeffs[1..].iter().any(|c| !c.is_finite()) {
            return Err(ClosureError::InvalidModel(
                "capillary pressure coefficients must be finite".into(),
            ));
        }
        let rho_plus = 1.0 / alpha_plus;
        let rho_minus = 1.0 / (1.0 - alpha_plus);
        let offset = plus.pressure(rho_plus) - minus.pressure(rho_minus);
        if coeffs[0].is_nan() {
            coeffs[0] = offset;
        } else if (coeffs[0] - offset).abs() > 1e-10 * offset.abs().max(1.0) {
            return Err(ClosureError::InvalidModel(format!(
                "equilibrium inconsistent: P+(rho+) - P-(rho-) = {offset} but f(1) = {}",
                coeffs[0]
            )));
        }
        Ok(Self {
            plus,
            minus,
            capillary: CapillaryPressure { coeffs },
            profile,
            alpha_plus,
        })
    }

    pub fn alpha_minus(&self) -> f64 {
        1.0 - self.alpha_plus
    }

    pub fn rho_bar_plus(&self) -> f64 {
        1.0 / self.alpha_plus
    }

    pub fn rho_bar_minus(&self) -> f64 {
        1.0 / self.alpha_minus()
    }

    /// Pressure balance `φ(ρ⁺)` and its derivative at fixed `(R⁺, R⁻)`.
    fn balance(&self, rho: f64, rp: f64, rm: f64) -> (f64, f64) {
        let gap = rho - rp;
        let rho_minus = rm * rho / gap;
        let value =
            self.plus.pressure(rho) - self.minus.pressure(rho_minus) - self.capillary.value(rm);
        let slope = self.plus.derivative(rho)
            + self.minus.derivative(rho_minus) * rm * rp / (gap * gap);
        (value, slope)
    }

    /// Solves `P⁺(ρ⁺) − P⁻(R⁻ρ⁺/(ρ⁺−R⁺)) = f(R⁻)` for `ρ⁺ ∈ (R⁺, ∞)`.
    ///
    /// Safeguarded Newton: the bracket is found by geometric expansion and any
    /// Newton iterate leaving it is replaced by bisection.
    pub fn solve_rho_plus(&self, rp: f64, rm: f64, tol: f64) -> Result<f64> {
        if !(rp > 0.0 && rm > 0.0 && tol > 0.0) {
            return Err(ClosureError::InvalidModel(format!(
                "solve_rho_plus needs positive inputs (R+ = {rp}, R- = {rm}, tol = {tol})"
            )));
        }
        let hi_limit = rp * 1e6;
        let mut eps = 1.0;
        let mut lo = rp * (1.0 + eps);
        while self.balance(lo, rp, rm).0 >= 0.0 {
            eps *= 0.5;
            if eps < 1e-14 {
                return Err(ClosureError::NoBracket {
                    lo: rp * (1.0 + eps),
                    hi: hi_limit,
                });
            }
            lo = rp * (1.0 + eps);
        }
        let mut hi = rp * 2.0;
        while self.balance(hi, rp, rm).0 <= 0.0 {
            hi *= 2.0;
            if hi > hi_limit {
                return Err(ClosureError::NoBracket { lo, hi: hi_limit });
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..400 {
            let (value, slope) = self.balance(x, rp, rm);
            if value.abs() <= tol {
                return Ok(x);
            }
            if !(slope > 0.0) {
                return Err(ClosureError::NonMonotone { at: x, slope });
            }
            if value < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let mut next = x - value / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if next == x || hi - lo <= 2.0 * f64::EPSILON * x {
                return Ok(next);
            }
            x = next;
        }
        Ok(x)
    }

    /// Mixture state `(ρ±, α±, s±², C²)` at fraction densities `(R⁺, R⁻)`.
    pub fn mixture_state(&self, rp: f64, rm: f64) -> Result<MixtureState> {
        check_density(rp)?;
        check_density(rm)?;
        let rho_plus = self.solve_rho_plus(rp, rm, 1e-14)?;
        let rho_minus = rm * rho_plus / (rho_plus - rp);
        check_density(rho_plus)?;
        check_density(rho_minus)?;
        let alpha_plus = rp / rho_plus;
        let alpha_minus = 1.0 - alpha_plus;
        let s2_plus = self.plus.derivative(rho_plus);
        let s2_minus = self.minus.derivative(rho_minus);
        let c2 = s2_minus * s2_plus / (alpha_minus * rho_plus * s2_plus + alpha_plus * rho_minus * s2_minus);
        Ok(MixtureState {
            r_plus: rp,
            r_minus: rm,
            rho_plus,
            rho_minus,
            alpha_plus,
            alpha_minus,
            s2_plus,
            s2_minus,
            c2,
        })
    }

    /// The β table at equilibrium, without root extraction.
    pub fn equilibrium_betas(&self) -> Result<[f64; 4]> {
        let eq = self.mixture_state(1.0, 1.0)?;
        let fp = self.capillary.slope_at_equilibrium();
        Ok(betas_at(&eq, fp))
    }

    /// Equilibrium coefficients β₁–β₄, characteristic roots and stability.
    pub fn equilibrium_coefficients(&self) -> Result<ClosureCoefficients> {
        let beta = self.equilibrium_betas()?;
        let report = self.stability_margin()?;
        let mut coeffs = ClosureCoefficients::from_betas(beta)?;
        coeffs.stable = report.stable;
        coeffs.stability_margin = report.margin;
        Ok(coeffs)
    }

    /// Stability window `−s₋²/α⁻ < f′(1) < 0` evaluated at equilibrium.
    pub fn stability_margin(&self) -> Result<StabilityReport> {
        let eq = self.mixture_state(1.0, 1.0)?;
        let window_low = -eq.s2_minus / eq.alpha_minus;
        let window_high = 0.0;
        let fprime = self.capillary.slope_at_equilibrium();
        let stable = fprime > window_low && fprime < window_high;
        let dist = (fprime - window_low).abs().min((window_high - fprime).abs());
        Ok(StabilityReport {
            window_low,
            window_high,
            fprime,
            stable,
            margin: if stable { dist } else { -dist },
        })
    }

    /// `L(R)` for this model's capillarity profile.
    pub fn fluctuation_forward(&self, r: f64) -> Result<f64> {
        self.profile.fluctuation_forward(r)
    }

    pub fn fluctuation_inverse(&self, y: f64) -> Result<f64> {
        self.profile.fluctuation_inverse(y)
    }

    /// `(ψ̃, Q̃, φ̃)` at fluctuation `n` for capillarity `κ`.
    pub fn composite_profiles(&self, n: f64, kappa: f64) -> Result<CompositeProfiles> {
        let r = self.fluctuation_inverse(n / kappa.sqrt())?;
        Ok(CompositeProfiles::at_density(&self.profile, r))
    }

    /// Nonlinear pressure-coefficient deviations `g₁..g₄` at `(R⁺, R⁻)`,
    /// given the equilibrium β table.
    pub fn g_coefficients_with(&self, beta: &[f64; 4], rp: f64, rm: f64) -> Result<[f64; 4]> {
        let st = self.mixture_state(rp, rm)?;
        let fp = self.capillary.derivative(rm);
        let w_plus = (rp / self.profile.m(rp)).sqrt();
        let w_minus = (rm / self.profile.m(rm)).sqrt();
        let g1 = st.c2 * st.rho_minus / st.rho_plus * w_plus - beta[0];
        let g2 = (st.c2 + st.c2 * st.alpha_minus * fp / st.s2_minus) * w_minus - beta[1];
        let g3 = st.c2 * w_plus - beta[2];
        // g₄ multiplies ∇n⁻, so its density weight is taken at R⁻.
        let g4 = (st.c2 * st.rho_plus / st.rho_minus - st.c2 * st.alpha_plus * fp / st.s2_plus)
            * w_minus
            - beta[3];
        Ok([g1, g2, g3, g4])
    }

    pub fn g_coefficients(&self, rp: f64, rm: f64) -> Result<[f64; 4]> {
        let beta = self.equilibrium_betas()?;
        self.g_coefficients_with(&beta, rp, rm)
    }
}

fn betas_at(eq: &MixtureState, fp: f64) -> [f64; 4] {
    let c2 = eq.c2;
    [
        c2 * eq.rho_minus / eq.rho_plus,
        c2 * (1.0 + eq.alpha_minus * fp / eq.s2_minus),
        c2,
        c2 * (eq.rho_plus / eq.rho_minus - eq.alpha_plus * fp / eq.s2_plus),
    ]
}
