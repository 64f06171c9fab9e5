//! Exact least-squares hedging on a small full-information sign tree.
//!
//! Each period draws an observed sign `xi` and a price sign `xi0` with
//! `P(xi0 = xi) = (1 + rho) / 2`, so `E[xi0 xi] = rho`. Increments are
//! `dw = sqrt(dt) xi`, `dw0 = sqrt(dt) xi0` and `dS = sigma (theta dt + dw0)`,
//! with coefficients read at the observed node. The observed walk is the
//! binary observation lattice, so lattice fields apply directly.

use nalgebra::{DMatrix, DVector};

use crate::error::{MvhError, Result};
use crate::lattice::{build_lattice, AdaptedField, ObservationLattice, TimeGrid};
use crate::model::DiffusionSpec;

pub const MAX_ORACLE_PERIODS: usize = 6;

#[derive(Debug, Clone)]
struct Atom {
    prob: f64,
    /// Observed node before each step.
    nodes: Vec<usize>,
    ds: Vec<f64>,
    ds_hat: Vec<f64>,
    dw: Vec<f64>,
    dw0: Vec<f64>,
    claim: f64,
}

/// All `4^n` atoms of the product tree with their probabilities.
#[derive(Debug, Clone)]
pub struct OracleTree {
    lattice: ObservationLattice,
    rho: f64,
    atoms: Vec<Atom>,
}

impl OracleTree {
    pub fn new(spec: &DiffusionSpec, n_periods: usize) -> Result<Self> {
        spec.validate()?;
        if n_periods == 0 || n_periods > MAX_ORACLE_PERIODS {
            return Err(MvhError::Resource {
                what: "oracle periods".into(),
                requested: n_periods as u64,
                cap: MAX_ORACLE_PERIODS as u64,
            });
        }
        let lattice = build_lattice(TimeGrid::new(n_periods, spec.horizon)?)?;
        let theta = spec.theta_field(&lattice)?;
        let sigma = spec.sigma_field(&lattice)?;
        let rho = spec.rho;
        let dt = lattice.dt();
        let h = lattice.sqrt_dt();
        let atoms = (0..1usize << (2 * n_periods))
            .map(|a| {
                let mut prob = 1.0;
                let mut node = 0;
                let mut w = 0.0;
                let mut w0 = 0.0;
                let mut at = Atom {
                    prob: 0.0,
                    nodes: Vec::with_capacity(n_periods),
                    ds: Vec::with_capacity(n_periods),
                    ds_hat: Vec::with_capacity(n_periods),
                    dw: Vec::with_capacity(n_periods),
                    dw0: Vec::with_capacity(n_periods),
                    claim: 0.0,
                };
                for t in 0..n_periods {
                    let down = (a >> (2 * t)) & 1 == 1;
                    let flip = (a >> (2 * t + 1)) & 1 == 1;
                    let xi = if down { -1.0 } else { 1.0 };
                    let xi0 = if flip { -xi } else { xi };
                    prob *= if flip {
                        0.25 * (1.0 - rho)
                    } else {
                        0.25 * (1.0 + rho)
                    };
                    let (th, s) = (theta.get(t, node), sigma.get(t, node));
                    at.nodes.push(node);
                    at.dw.push(h * xi);
                    at.dw0.push(h * xi0);
                    at.ds.push(s * (th * dt + h * xi0));
                    at.ds_hat.push(s * (th * dt + rho * h * xi));
                    w += h * xi;
                    w0 += h * xi0;
                    node = 2 * node + usize::from(down);
                }
                at.prob = prob;
                at.claim = spec.payoff.evaluate(w, w0);
                at
            })
            .collect();
        Ok(OracleTree {
            lattice,
            rho,
            atoms,
        })
    }

    pub fn lattice(&self) -> &ObservationLattice {
        &self.lattice
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn total_probability(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }

    fn n_periods(&self) -> usize {
        self.lattice.n_steps()
    }

    fn check_field(&self, pi: &AdaptedField) -> Result<()> {
        if pi.n_levels() < self.n_periods() {
            return Err(MvhError::Shape {
                context: "oracle strategy levels",
                expected: self.n_periods(),
                got: pi.n_levels(),
            });
        }
        Ok(())
    }

    fn wealth(&self, a: &Atom, pi: &AdaptedField, x: f64) -> f64 {
        let mut v = x;
        for t in 0..self.n_periods() {
            v += pi.get(t, a.nodes[t]) * a.ds[t];
        }
        v
    }

    /// Exact `E[(x + sum pi dS - H)^2]` for a predictable lattice strategy.
    pub fn hedging_error(&self, pi: &AdaptedField, x: f64) -> Result<f64> {
        self.check_field(pi)?;
        Ok(self
            .atoms
            .iter()
            .map(|a| a.prob * (self.wealth(a, pi, x) - a.claim).powi(2))
            .sum())
    }

    /// `max_t |E[dw0_t dw_t] - rho dt|`.
    pub fn correlation_defect(&self) -> f64 {
        let dt = self.lattice.dt();
        (0..self.n_periods())
            .map(|t| {
                let m: f64 = self.atoms.iter().map(|a| a.prob * a.dw0[t] * a.dw[t]).sum();
                (m - self.rho * dt).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest gap between `E[sum pi dS | observed signs]` and `sum pi dS^`
    /// over the observed terminal nodes.
    pub fn projection_defect(&self, pi: &AdaptedField) -> Result<f64> {
        self.check_field(pi)?;
        let n = self.n_periods();
        let m = self.lattice.n_terminal();
        let mut mass = vec![0.0; m];
        let mut full = vec![0.0; m];
        let mut hat = vec![0.0; m];
        for a in &self.atoms {
            let last = a.nodes[n - 1];
            let leaf = 2 * last + usize::from(a.dw[n - 1] < 0.0);
            let mut g = 0.0;
            let mut gh = 0.0;
            for t in 0..n {
                let p = pi.get(t, a.nodes[t]);
                g += p * a.ds[t];
                gh += p * a.ds_hat[t];
            }
            mass[leaf] += a.prob;
            full[leaf] += a.prob * g;
            hat[leaf] = gh;
        }
        Ok((0..m)
            .map(|j| (full[j] / mass[j] - hat[j]).abs())
            .fold(0.0, f64::max))
    }

    /// Ratio of the conditional variances of `dS^` and `dS` at every
    /// observed node, returned as the largest deviation from `rho^2`.
    pub fn variance_ratio_defect(&self) -> f64 {
        let n = self.n_periods();
        let mut worst = 0.0f64;
        for t in 0..n {
            let k = self.lattice.n_nodes(t);
            let mut stats = vec![[0.0f64; 5]; k];
            for a in &self.atoms {
                let s = &mut stats[a.nodes[t]];
                s[0] += a.prob;
                s[1] += a.prob * a.ds[t];
                s[2] += a.prob * a.ds[t] * a.ds[t];
                s[3] += a.prob * a.ds_hat[t];
                s[4] += a.prob * a.ds_hat[t] * a.ds_hat[t];
            }
            for s in stats {
                let var = s[2] / s[0] - (s[1] / s[0]).powi(2);
                let var_hat = s[4] / s[0] - (s[3] / s[0]).powi(2);
                worst = worst.max((var_hat / var - self.rho * self.rho).abs());
            }
        }
        worst
    }

    /// `E[(H - x - sum pi dS) dS_t 1{node}]` for every observed node, the
    /// first-order condition in the direction of each indicator strategy.
    pub fn orthogonality(&self, pi: &AdaptedField, x: f64) -> Result<AdaptedField> {
        self.check_field(pi)?;
        let mut out = AdaptedField::predictable_zeros(&self.lattice);
        for a in &self.atoms {
            let short = a.claim - self.wealth(a, pi, x);
            for t in 0..self.n_periods() {
                let node = a.nodes[t];
                out.set(t, node, out.get(t, node) + a.prob * short * a.ds[t]);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub pi: AdaptedField,
    pub error: f64,
    /// Largest first-order condition residual at the optimum.
    pub orthogonality: f64,
}

/// Global minimiser of `E[(x + sum pi dS - H)^2]` over strategies that are
/// functions of the observed signs, from the normal equations.
pub fn lsq_oracle(
    spec: &DiffusionSpec,
    n_periods: usize,
    x: f64,
) -> Result<(OracleTree, OracleSolution)> {
    let tree = OracleTree::new(spec, n_periods)?;
    let sol = solve_on_tree(&tree, x)?;
    Ok((tree, sol))
}

pub fn solve_on_tree(tree: &OracleTree, x: f64) -> Result<OracleSolution> {
    let n = tree.n_periods();
    let dim = (1usize << n) - 1;
    let offset = |t: usize| (1usize << t) - 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for a in &tree.atoms {
        let target = a.claim - x;
        for s in 0..n {
            let is = offset(s) + a.nodes[s];
            rhs[is] += a.prob * a.ds[s] * target;
            for t in 0..n {
                let it = offset(t) + a.nodes[t];
                gram[(is, it)] += a.prob * a.ds[s] * a.ds[t];
            }
        }
    }
    let coef = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| MvhError::Invariant(format!("oracle normal equations: {e}")))?,
    };
    let levels: Vec<Vec<f64>> = (0..n)
        .map(|t| (0..1usize << t).map(|i| coef[offset(t) + i]).collect())
        .collect();
    let pi = AdaptedField::from_levels(levels)?;
    let error = tree.hedging_error(&pi, x)?;
    let orthogonality = tree.orthogonality(&pi, x)?.max_abs();
    Ok(OracleSolution {
        pi,
        error,
        orthogonality,
    })
}
