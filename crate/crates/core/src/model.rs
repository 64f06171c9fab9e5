//! Market description for the partially observed diffusion model.
//!
//! The hedger observes only `w`; the return process is
//! `dS = sigma (theta dt + dw0)` with `w0 = rho w - sqrt(1 - rho^2) w_perp`.
//! Coefficients are functions of time and of the observed value `w_t`.

use std::fmt;
use std::sync::Arc;

use crate::error::{MvhError, Result};
use crate::lattice::{AdaptedField, ObservationLattice};

pub type CurveFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type FieldFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A model coefficient `c(t, x)` where `x` is the observed value of `w`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// Deterministic curve `c(t)`.
    Curve(CurveFn),
    /// General `c(t, x)`.
    Field(FieldFn),
}

impl Coefficient {
    pub fn curve(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Curve(Arc::new(f))
    }

    pub fn field(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Field(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Curve(f) => f(t),
            Coefficient::Field(f) => f(t, x),
        }
    }

    pub fn is_x_independent(&self) -> bool {
        !matches!(self, Coefficient::Field(_))
    }

    pub fn is_zero_constant(&self) -> bool {
        matches!(self, Coefficient::Constant(c) if *c == 0.0)
    }

    /// Samples the coefficient at every predictable node `(t_k, w_k)`.
    pub fn sample_predictable(&self, lattice: &ObservationLattice) -> AdaptedField {
        AdaptedField::predictable_from_fn(lattice, |t, i| {
            self.eval(lattice.time(t), lattice.w(t, i))
        })
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Curve(_) => f.write_str("Curve(..)"),
            Coefficient::Field(_) => f.write_str("Field(..)"),
        }
    }
}

impl From<f64> for Coefficient {
    fn from(c: f64) -> Self {
        Coefficient::Constant(c)
    }
}

/// Terminal payoff `g` of a claim depending on one terminal value.
#[derive(Clone)]
pub struct PayoffFn {
    label: String,
    f: CurveFn,
}

impl PayoffFn {
    pub fn new(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        PayoffFn {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn identity() -> Self {
        PayoffFn::new("x", |x| x)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for PayoffFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PayoffFn({})", self.label)
    }
}

#[derive(Clone)]
pub enum PayoffSpec {
    /// `H = c`.
    Constant(f64),
    /// `H = g(w_T)`, measurable with respect to the observations.
    Observable(PayoffFn),
    /// `H = g(w0_T)`, a function of the unobserved price noise.
    Hidden(PayoffFn),
    /// `H = g(w_T, w0_T)`. Can be simulated, but its tilde inputs need the
    /// stochastic derivative of the claim and are not supported.
    Joint { label: String, f: FieldFn },
}

impl fmt::Debug for PayoffSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PayoffSpec::Constant(c) => write!(f, "Constant({c})"),
            PayoffSpec::Observable(g) => write!(f, "Observable({})", g.label()),
            PayoffSpec::Hidden(g) => write!(f, "Hidden({})", g.label()),
            PayoffSpec::Joint { label, .. } => write!(f, "Joint({label})"),
        }
    }
}

impl PayoffSpec {
    /// Payoff on a full-information outcome `(w_T, w0_T)`.
    #[inline]
    pub fn evaluate(&self, w_terminal: f64, w0_terminal: f64) -> f64 {
        match self {
            PayoffSpec::Constant(c) => *c,
            PayoffSpec::Observable(g) => g.eval(w_terminal),
            PayoffSpec::Hidden(g) => g.eval(w0_terminal),
            PayoffSpec::Joint { f, .. } => f(w_terminal, w0_terminal),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PayoffSpec::Constant(_) => "constant",
            PayoffSpec::Observable(_) => "observable",
            PayoffSpec::Hidden(_) => "hidden",
            PayoffSpec::Joint { .. } => "joint",
        }
    }
}

/// Which sign convention to use for `h~`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HTildeSign {
    /// `h~ = -sqrt(1-rho^2) h^perp / sigma`. Optimal. Config value `section3`.
    #[default]
    Standard,
    /// Opposite sign, kept for reproducing the erratum. Config value `section1`.
    Flipped,
}

impl HTildeSign {
    pub fn factor(self) -> f64 {
        match self {
            HTildeSign::Standard => 1.0,
            HTildeSign::Flipped => -1.0,
        }
    }
}

impl std::str::FromStr for HTildeSign {
    type Err = MvhError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "section3" => Ok(HTildeSign::Standard),
            "section1" => Ok(HTildeSign::Flipped),
            other => Err(MvhError::Domain(format!(
                "h_tilde_sign must be section3 or section1, got `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiffusionSpec {
    /// Market price of risk `theta = mu / sigma`.
    pub theta: Coefficient,
    pub sigma: Coefficient,
    pub rho: f64,
    pub horizon: f64,
    pub payoff: PayoffSpec,
    pub initial_capital: f64,
}

impl DiffusionSpec {
    pub fn new(theta: impl Into<Coefficient>, rho: f64, horizon: f64, payoff: PayoffSpec) -> Self {
        DiffusionSpec {
            theta: theta.into(),
            sigma: Coefficient::Constant(1.0),
            rho,
            horizon,
            payoff,
            initial_capital: 0.0,
        }
    }

    pub fn with_sigma(mut self, sigma: impl Into<Coefficient>) -> Self {
        self.sigma = sigma.into();
        self
    }

    pub fn with_initial_capital(mut self, x: f64) -> Self {
        self.initial_capital = x;
        self
    }

    pub fn with_payoff(mut self, payoff: PayoffSpec) -> Self {
        self.payoff = payoff;
        self
    }

    pub fn rho_sq(&self) -> f64 {
        self.rho * self.rho
    }

    /// Checks `rho^2 < 1` and the horizon.
    pub fn validate(&self) -> Result<()> {
        check_rho(self.rho)?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(MvhError::Domain(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// `theta` sampled on predictable nodes, checked finite.
    pub fn theta_field(&self, lattice: &ObservationLattice) -> Result<AdaptedField> {
        let f = self.theta.sample_predictable(lattice);
        if let Some(bad) = f.values().find(|v| !v.is_finite()) {
            return Err(MvhError::Domain(format!(
                "theta is not finite on the grid ({bad})"
            )));
        }
        Ok(f)
    }

    /// `sigma` sampled on predictable nodes, checked positive.
    pub fn sigma_field(&self, lattice: &ObservationLattice) -> Result<AdaptedField> {
        let f = self.sigma.sample_predictable(lattice);
        if let Some(bad) = f.values().find(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(MvhError::Domain(format!(
                "sigma must be positive on the grid, found {bad}"
            )));
        }
        Ok(f)
    }
}

pub fn check_rho(rho: f64) -> Result<()> {
    let rho_sq = rho * rho;
    if !(rho_sq < 1.0) {
        return Err(MvhError::ConditionE { rho_sq });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_gate() {
        assert!(check_rho(0.99).is_ok());
        assert!(matches!(check_rho(1.0), Err(MvhError::ConditionE { .. })));
        assert!(check_rho(-1.5).is_err());
        assert!(check_rho(f64::NAN).is_err());
    }

    #[test]
    fn payoff_evaluation() {
        let hidden = PayoffSpec::Hidden(PayoffFn::new("x^2", |x| x * x));
        assert_eq!(hidden.evaluate(5.0, 2.0), 4.0);
        let obs = PayoffSpec::Observable(PayoffFn::identity());
        assert_eq!(obs.evaluate(5.0, 2.0), 5.0);
        assert_eq!(PayoffSpec::Constant(3.0).evaluate(1.0, 1.0), 3.0);
    }

    #[test]
    fn sign_parsing() {
        assert_eq!(
            "Section1".parse::<HTildeSign>().unwrap(),
            HTildeSign::Flipped
        );
        assert!("s2".parse::<HTildeSign>().is_err());
    }
}
