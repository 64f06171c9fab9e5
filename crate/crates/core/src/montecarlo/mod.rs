//! Monte Carlo simulation of the partially observed market, hedging errors of
//! observation-driven strategies, variational checks, and the exact
//! least-squares oracle on small sign trees.
//!
//! Increments are regenerated per path from the path's random stream rather
//! than stored, so a batch costs O(1) memory regardless of its size.

pub mod oracle;
pub mod rng;
pub mod rules;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{MvhError, Result};
use crate::model::{check_rho, DiffusionSpec};
use rng::{normal, path_stream};

pub use rules::{ConstantRule, FnRule, LatticeRule, MarkovForm, MarkovRule, OffsetRule, TimeRule};

/// Upper bound on `n_paths * n_steps` for one batch.
pub const MAX_PATH_CELLS: u64 = 1 << 31;

/// Increments of one simulated path.
#[derive(Debug, Clone)]
pub struct PathIncrements {
    pub dw: Vec<f64>,
    pub dw_perp: Vec<f64>,
    /// `rho dw - sqrt(1 - rho^2) dw_perp`.
    pub dw0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PathBatch {
    pub n_paths: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub rho: f64,
    pub seed: u64,
}

impl PathBatch {
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    /// Regenerates path `p`; two normals per step, observed noise first.
    pub fn path(&self, p: usize) -> PathIncrements {
        let sqrt_dt = self.dt().sqrt();
        let perp = (1.0 - self.rho * self.rho).sqrt();
        let mut rng = path_stream(self.seed, p as u64);
        let mut dw = Vec::with_capacity(self.n_steps);
        let mut dw_perp = Vec::with_capacity(self.n_steps);
        let mut dw0 = Vec::with_capacity(self.n_steps);
        for _ in 0..self.n_steps {
            let a = sqrt_dt * normal(&mut rng);
            let b = sqrt_dt * normal(&mut rng);
            dw.push(a);
            dw_perp.push(b);
            dw0.push(self.rho * a - perp * b);
        }
        PathIncrements { dw, dw_perp, dw0 }
    }

    /// Pooled sample correlation of `(dw0, dw)` over all steps and paths.
    pub fn sample_correlation(&self) -> f64 {
        let sums: Vec<[f64; 3]> = (0..self.n_paths)
            .into_par_iter()
            .map(|p| {
                let inc = self.path(p);
                let mut s = [0.0; 3];
                for (a, b) in inc.dw.iter().zip(&inc.dw0) {
                    s[0] += a * b;
                    s[1] += a * a;
                    s[2] += b * b;
                }
                s
            })
            .collect();
        let col = |j: usize| pairwise_sum(&sums.iter().map(|s| s[j]).collect::<Vec<_>>());
        col(0) / (col(1) * col(2)).sqrt()
    }
}

pub fn simulate_paths(
    spec: &DiffusionSpec,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathBatch> {
    spec.validate()?;
    check_rho(spec.rho)?;
    if n_paths == 0 || n_steps == 0 {
        return Err(MvhError::Domain(
            "a path batch needs n_paths >= 1 and n_steps >= 1".into(),
        ));
    }
    let cells = n_paths as u64 * n_steps as u64;
    if cells > MAX_PATH_CELLS {
        return Err(MvhError::Resource {
            what: "path batch n_paths * n_steps".into(),
            requested: cells,
            cap: MAX_PATH_CELLS,
        });
    }
    Ok(PathBatch {
        n_paths,
        n_steps,
        horizon: spec.horizon,
        rho: spec.rho,
        seed,
    })
}

/// What a strategy sees before choosing the position for step `step`: the
/// observed path and nothing else.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    /// Observed value `w_t`.
    pub w: f64,
    /// Observed increments of the steps already completed.
    pub dw: &'a [f64],
}

/// Per-path state of a strategy.
pub trait PathPolicy {
    fn position(&mut self, obs: &Observation<'_>) -> Result<f64>;
}

/// A rule producing a fresh policy for each path.
pub trait Strategy: Sync {
    fn start(&self) -> Box<dyn PathPolicy + '_>;

    /// Rejects batches the rule cannot run on.
    fn check(&self, _n_steps: usize, _horizon: f64) -> Result<()> {
        Ok(())
    }

    fn label(&self) -> String;
}

/// Runs the strategies on path `p` and returns each terminal wealth
/// `x_i + sum pi dS` with the claim `H(w_T, w0_T)`.
fn run_path(
    batch: &PathBatch,
    spec: &DiffusionSpec,
    rules: &[(&dyn Strategy, f64)],
    p: usize,
) -> Result<(Vec<f64>, f64)> {
    let inc = batch.path(p);
    let dt = batch.dt();
    let mut policies: Vec<Box<dyn PathPolicy + '_>> =
        rules.iter().map(|(r, _)| r.start()).collect();
    let mut wealth: Vec<f64> = rules.iter().map(|(_, x)| *x).collect();
    let mut w = 0.0;
    let mut w0 = 0.0;
    for k in 0..batch.n_steps {
        let t = batch.time(k);
        let obs = Observation {
            step: k,
            t,
            dt,
            w,
            dw: &inc.dw[..k],
        };
        let ds = spec.sigma.eval(t, w) * (spec.theta.eval(t, w) * dt + inc.dw0[k]);
        for (pol, x) in policies.iter_mut().zip(wealth.iter_mut()) {
            *x += pol.position(&obs)? * ds;
        }
        w += inc.dw[k];
        w0 += inc.dw0[k];
    }
    Ok((wealth, spec.payoff.evaluate(w, w0)))
}

fn check_rules(
    batch: &PathBatch,
    spec: &DiffusionSpec,
    rules: &[(&dyn Strategy, f64)],
) -> Result<()> {
    if (spec.rho - batch.rho).abs() > 0.0 || (spec.horizon - batch.horizon).abs() > 0.0 {
        return Err(MvhError::Domain(
            "batch was simulated for a different spec".into(),
        ));
    }
    for (r, _) in rules {
        r.check(batch.n_steps, batch.horizon)?;
    }
    Ok(())
}

/// Fixed-order pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Mean and standard error of the sample mean.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0) / n).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct HedgeReport {
    pub strategy: String,
    /// `E[(X_T - H)^2]`.
    pub mean_sq_error: f64,
    pub std_error: f64,
    /// `E[X_T - H]` and its standard error.
    pub mean_error: f64,
    pub mean_error_se: f64,
    pub mean_wealth: f64,
    pub mean_wealth_se: f64,
    /// Largest `|X_T - H|` over the batch.
    pub max_abs_error: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl HedgeReport {
    pub const CSV_HEADER: &'static str = "quantity,value,std_error,n_paths,n_steps,seed";

    pub fn csv_rows(&self) -> Vec<String> {
        let row = |q: &str, v: f64, se: f64| {
            format!(
                "{q},{v},{se},{},{},{}",
                self.n_paths, self.n_steps, self.seed
            )
        };
        vec![
            row("mean_sq_error", self.mean_sq_error, self.std_error),
            row("mean_error", self.mean_error, self.mean_error_se),
            row(
                "mean_terminal_wealth",
                self.mean_wealth,
                self.mean_wealth_se,
            ),
            row("max_abs_error", self.max_abs_error, 0.0),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in self.csv_rows() {
            s.push_str(&r);
            s.push('\n');
        }
        s
    }
}

/// Squared terminal shortfall of `strategy` started from capital `x`.
pub fn hedging_error(
    batch: &PathBatch,
    spec: &DiffusionSpec,
    strategy: &dyn Strategy,
    x: f64,
) -> Result<HedgeReport> {
    let rules = [(strategy, x)];
    check_rules(batch, spec, &rules)?;
    let outcomes: Vec<(f64, f64)> = (0..batch.n_paths)
        .into_par_iter()
        .map(|p| run_path(batch, spec, &rules, p).map(|(w, h)| (w[0], h)))
        .collect::<Result<_>>()?;
    let errors: Vec<f64> = outcomes.iter().map(|(w, h)| w - h).collect();
    let terminal: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let (mse, se) = mean_and_se(&sq);
    let (me, me_se) = mean_and_se(&errors);
    let (mw, mw_se) = mean_and_se(&terminal);
    Ok(HedgeReport {
        strategy: strategy.label(),
        mean_sq_error: mse,
        std_error: se,
        mean_error: me,
        mean_error_se: me_se,
        mean_wealth: mw,
        mean_wealth_se: mw_se,
        max_abs_error: errors.iter().fold(0.0, |m, e| m.max(e.abs())),
        n_paths: batch.n_paths,
        n_steps: batch.n_steps,
        seed: batch.seed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationRow {
    pub direction: String,
    /// `E[(H - X*_T) X^delta_T]`.
    pub statistic: f64,
    pub std_error: f64,
}

impl PerturbationRow {
    /// `|statistic| <= 3 se + bias`.
    pub fn passes(&self, bias: f64) -> bool {
        self.statistic.abs() <= 3.0 * self.std_error + bias
    }

    /// Statistic is further than `k` standard errors from zero.
    pub fn significant(&self, k: f64) -> bool {
        self.statistic.abs() > k * self.std_error
    }
}

/// First-order optimality statistics `E[(H - X*_T) int delta dS]` for each
/// direction `delta`, with `X*` the wealth of `pi_star` from capital `x`.
pub fn perturbation_test(
    batch: &PathBatch,
    spec: &DiffusionSpec,
    pi_star: &dyn Strategy,
    directions: &[&dyn Strategy],
    x: f64,
) -> Result<Vec<PerturbationRow>> {
    let mut rules: Vec<(&dyn Strategy, f64)> = vec![(pi_star, x)];
    rules.extend(directions.iter().map(|d| (*d, 0.0)));
    check_rules(batch, spec, &rules)?;
    let samples: Vec<Vec<f64>> = (0..batch.n_paths)
        .into_par_iter()
        .map(|p| {
            run_path(batch, spec, &rules, p).map(|(w, h)| {
                let short = h - w[0];
                w[1..].iter().map(|xd| short * xd).collect()
            })
        })
        .collect::<Result<_>>()?;
    Ok(directions
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let col: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let (m, se) = mean_and_se(&col);
            PerturbationRow {
                direction: d.label(),
                statistic: m,
                std_error: se,
            }
        })
        .collect())
}
