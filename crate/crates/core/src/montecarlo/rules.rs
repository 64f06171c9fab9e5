//! Strategy rules driven by the observed path only.

use std::sync::Arc;

use super::{Observation, PathPolicy, Strategy};
use crate::error::{MvhError, Result};
use crate::lattice::AdaptedField;
use crate::model::Coefficient;
use crate::pde::PdeGrid;

/// Holds a fixed position.
#[derive(Debug, Clone, Copy)]
pub struct ConstantRule(pub f64);

impl PathPolicy for ConstantRule {
    fn position(&mut self, _obs: &Observation<'_>) -> Result<f64> {
        Ok(self.0)
    }
}

impl Strategy for ConstantRule {
    fn start(&self) -> Box<dyn PathPolicy + '_> {
        Box::new(*self)
    }

    fn label(&self) -> String {
        format!("constant {}", self.0)
    }
}

/// Deterministic schedule, one position per step.
#[derive(Debug, Clone)]
pub struct TimeRule {
    pub positions: Vec<f64>,
    pub label: String,
}

struct TimePolicy<'a>(&'a [f64]);

impl PathPolicy for TimePolicy<'_> {
    fn position(&mut self, obs: &Observation<'_>) -> Result<f64> {
        Ok(self.0[obs.step])
    }
}

impl Strategy for TimeRule {
    fn start(&self) -> Box<dyn PathPolicy + '_> {
        Box::new(TimePolicy(&self.positions))
    }

    fn check(&self, n_steps: usize, _horizon: f64) -> Result<()> {
        if self.positions.len() != n_steps {
            return Err(MvhError::Shape {
                context: "time rule schedule",
                expected: n_steps,
                got: self.positions.len(),
            });
        }
        Ok(())
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Position `f(t, w_t)`.
#[derive(Clone)]
pub struct FnRule {
    pub f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub label: String,
}

impl FnRule {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FnRule {
            f: Arc::new(f),
            label: label.into(),
        }
    }
}

struct FnPolicy<'a>(&'a (dyn Fn(f64, f64) -> f64 + Send + Sync));

impl PathPolicy for FnPolicy<'_> {
    fn position(&mut self, obs: &Observation<'_>) -> Result<f64> {
        Ok((self.0)(obs.t, obs.w))
    }
}

impl Strategy for FnRule {
    fn start(&self) -> Box<dyn PathPolicy + '_> {
        Box::new(FnPolicy(self.f.as_ref()))
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Another rule shifted by a constant.
pub struct OffsetRule<'a> {
    pub base: &'a dyn Strategy,
    pub offset: f64,
}

struct OffsetPolicy<'a> {
    inner: Box<dyn PathPolicy + 'a>,
    offset: f64,
}

impl PathPolicy for OffsetPolicy<'_> {
    fn position(&mut self, obs: &Observation<'_>) -> Result<f64> {
        Ok(self.inner.position(obs)? + self.offset)
    }
}

impl Strategy for OffsetRule<'_> {
    fn start(&self) -> Box<dyn PathPolicy + '_> {
        Box::new(OffsetPolicy {
            inner: self.base.start(),
            offset: self.offset,
        })
    }

    fn check(&self, n_steps: usize, horizon: f64) -> Result<()> {
        self.base.check(n_steps, horizon)
    }

    fn label(&self) -> String {
        format!("{} {:+}", self.base.label(), self.offset)
    }
}

/// A predictable lattice field read along the sign walk of the observed
/// increments: an up move takes node `i` to `2i`, a down move to `2i + 1`.
#[derive(Debug, Clone)]
pub struct LatticeRule {
    pub field: AdaptedField,
    pub label: String,
}

struct LatticePolicy<'a> {
    field: &'a AdaptedField,
    node: usize,
}

impl PathPolicy for LatticePolicy<'_> {
    fn position(&mut self, obs: &Observation<'_>) -> Result<f64> {
        if let Some(&last) = obs.dw.last() {
            self.node = 2 * self.node + usize::from(last < 0.0);
        }
        Ok(self.field.get(obs.step, self.node))
    }
}

impl Strategy for LatticeRule {
    fn start(&self) -> Box<dyn PathPolicy + '_> {
        Box::new(LatticePolicy {
            field: &self.field,
            node: 0,
        })
    }

    fn check(&self, n_steps: usize, _horizon: f64) -> Result<()> {
        if self.field.n_levels() < n_steps {
            return Err(MvhError::Shape {
                context: "lattice rule levels",
                expected: n_steps,
                got: self.field.n_levels(),
            });
        }
        Ok(())
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// How the PDE-based strategy for a constant claim is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkovForm {
    /// `pi = (c - X^) g / sigma`, tracking the projected wealth `X^`.
    Feedback,
    /// `pi = c g E / sigma` with the stochastic exponential `E`.
    Exponential,
}

/// Optimal rule for a constant claim `c` built from the value PDE, with
/// `g = (theta u + rho u_x) / (1 - rho^2 + rho^2 u)`.
#[derive(Clone)]
pub struct MarkovRule<'a> {
    pub grid: &'a PdeGrid,
    pub theta: Coefficient,
    pub sigma: Coefficient,
    pub rho: f64,
    pub claim: f64,
    pub initial_capital: f64,
    pub form: MarkovForm,
}

struct MarkovPolicy<'a> {
    rule: &'a MarkovRule<'a>,
    // projected wealth, or log of the exponential
    state: f64,
    last: Option<(f64, f64, f64, f64)>,
}

impl PathPolicy for MarkovPolicy<'_> {
    fn position(&mut self, obs: &Observation<'_>) -> Result<f64> {
        let r = self.rule;
        let rho_sq = r.rho * r.rho;
        if let (Some((pi, g, th, s)), Some(&dw)) = (self.last, obs.dw.last()) {
            match r.form {
                MarkovForm::Feedback => self.state += pi * s * (th * obs.dt + r.rho * dw),
                MarkovForm::Exponential => {
                    self.state += -g * (th * obs.dt + r.rho * dw) - 0.5 * rho_sq * g * g * obs.dt
                }
            }
        }
        let (u, ux) = r.grid.eval(obs.t, obs.w)?;
        let th = r.theta.eval(obs.t, obs.w);
        let s = r.sigma.eval(obs.t, obs.w);
        let g = (th * u + r.rho * ux) / (1.0 - rho_sq + rho_sq * u);
        let pi = match r.form {
            MarkovForm::Feedback => (r.claim - self.state) * g / s,
            MarkovForm::Exponential => r.claim * g * self.state.exp() / s,
        };
        self.last = Some((pi, g, th, s));
        Ok(pi)
    }
}

impl Strategy for MarkovRule<'_> {
    fn start(&self) -> Box<dyn PathPolicy + '_> {
        Box::new(MarkovPolicy {
            rule: self,
            state: match self.form {
                MarkovForm::Feedback => self.initial_capital,
                MarkovForm::Exponential => 0.0,
            },
            last: None,
        })
    }

    fn check(&self, _n_steps: usize, horizon: f64) -> Result<()> {
        if (horizon - self.grid.horizon).abs() > 1e-12 {
            return Err(MvhError::Domain(format!(
                "pde grid horizon {} differs from batch horizon {horizon}",
                self.grid.horizon
            )));
        }
        Ok(())
    }

    fn label(&self) -> String {
        match self.form {
            MarkovForm::Feedback => "pde feedback".into(),
            MarkovForm::Exponential => "pde exponential".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, TimeGrid};

    fn obs<'a>(step: usize, w: f64, dw: &'a [f64]) -> Observation<'a> {
        Observation {
            step,
            t: step as f64 * 0.25,
            dt: 0.25,
            w,
            dw,
        }
    }

    #[test]
    fn lattice_rule_follows_signs() {
        let l = build_lattice(TimeGrid::new(3, 1.0).unwrap()).unwrap();
        let field = AdaptedField::predictable_from_fn(&l, |t, i| (10 * t + i) as f64);
        let rule = LatticeRule {
            field,
            label: "f".into(),
        };
        let mut p = rule.start();
        let dw = [0.1, -0.2];
        assert_eq!(p.position(&obs(0, 0.0, &dw[..0])).unwrap(), 0.0);
        assert_eq!(p.position(&obs(1, 0.1, &dw[..1])).unwrap(), 10.0);
        assert_eq!(p.position(&obs(2, -0.1, &dw[..2])).unwrap(), 21.0);
        assert!(rule.check(4, 1.0).is_err());
    }

    #[test]
    fn offset_and_fn_rules() {
        let base = FnRule::new("w", |_, w| w);
        let shifted = OffsetRule {
            base: &base,
            offset: 0.5,
        };
        let mut p = shifted.start();
        assert_eq!(p.position(&obs(0, 2.0, &[])).unwrap(), 2.5);
        let sched = TimeRule {
            positions: vec![1.0, 2.0],
            label: "s".into(),
        };
        assert!(sched.check(3, 1.0).is_err());
        assert_eq!(sched.start().position(&obs(1, 0.0, &[0.0])).unwrap(), 2.0);
    }
}
