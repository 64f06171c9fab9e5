//! The martingale operator equation `(Id + A) Y~_T = H~` on the lattice and
//! the optimal strategy assembled from its solution.
//!
//! In the diffusion normalisation, for a martingale `Y` with GKW integrand
//! `phi` against `dw`,
//!
//! ```text
//! (A Y)_T = sum_t (theta_t Y_t + rho phi_t) / (1 - rho^2) * (theta_t dt + rho dw_t)
//! ```
//!
//! and for any `Y`, `Z` on the lattice
//! `E[Z_T (A Y)_T] = (1 - rho^2) sum_t E[c_t(Y) c_t(Z)] dt` with
//! `c_t(Y) = (theta_t Y_t + rho phi_t) / (1 - rho^2)`. The form is symmetric and
//! nonnegative, so `A` is self-adjoint and positive semidefinite under the
//! atom-weighted inner product.

use crate::error::{MvhError, Result};
use crate::lattice::{
    integrand_of, martingale_from_terminal, project, stochastic_integral, AdaptedField, Driver,
    ObservationLattice,
};
use crate::model::{DiffusionSpec, HTildeSign, PayoffSpec};
use crate::quadrature::GaussHermite;

/// Default relative residual tolerance of the Krylov solve.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;

/// Inputs of the operator equation derived from the claim.
#[derive(Debug, Clone)]
pub struct TildeInputs {
    /// `h~`, predictable.
    pub h_tilde: AdaptedField,
    /// `H~` on the terminal atoms (claim only, initial capital not subtracted).
    pub h_tilde_terminal: Vec<f64>,
    /// `H^_t = E[H | G_t]`.
    pub h_hat: AdaptedField,
    /// Projected orthogonal integrand `h^perp^`, for hidden payoffs.
    pub h_perp_hat: Option<AdaptedField>,
    pub sign: HTildeSign,
}

pub fn compute_tilde_inputs(
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
    sign: HTildeSign,
) -> Result<TildeInputs> {
    spec.validate()?;
    let n = lattice.n_steps();
    match &spec.payoff {
        PayoffSpec::Constant(c) => {
            let h_hat = AdaptedField::from_fn(lattice, |_, _| *c);
            Ok(TildeInputs {
                h_tilde: AdaptedField::predictable_zeros(lattice),
                h_tilde_terminal: vec![*c; lattice.n_terminal()],
                h_hat,
                h_perp_hat: None,
                sign,
            })
        }
        PayoffSpec::Observable(g) => {
            // dH has no dw_perp component, so h^perp = 0 and h~ = 0.
            let terminal: Vec<f64> = lattice.w_level(n).iter().map(|&w| g.eval(w)).collect();
            let h_hat = martingale_from_terminal(&terminal, lattice)?;
            Ok(TildeInputs {
                h_tilde: AdaptedField::predictable_zeros(lattice),
                h_tilde_terminal: terminal,
                h_hat,
                h_perp_hat: None,
                sign,
            })
        }
        PayoffSpec::Hidden(g) => {
            let rho = spec.rho;
            let gap = 1.0 - rho * rho;
            let root_gap = gap.sqrt();
            let horizon = spec.horizon;
            let gh = GaussHermite::default();

            // w0_T | w_T ~ N(rho w_T, (1 - rho^2) T)
            let sd_terminal = (gap * horizon).sqrt();
            let hat_terminal: Vec<f64> = lattice
                .w_level(n)
                .iter()
                .map(|&w| gh.expect(|z| g.eval(rho * w + sd_terminal * z)))
                .collect();
            let h_hat = martingale_from_terminal(&hat_terminal, lattice)?;

            // H_t = G(t, w0_t) with G(t, y) = E g(y + sqrt(T - t) Z), so
            // h^perp_t = -sqrt(1 - rho^2) G_y(t, w0_t). Conditioning on w_t,
            // w0_T ~ N(rho w_t, T - rho^2 t) and Stein's identity gives
            // E[G_y | w_t] = E[g(m + s Z) Z] / s.
            let h_perp_hat = AdaptedField::predictable_from_fn(lattice, |t, i| {
                let m = rho * lattice.w(t, i);
                let s = (horizon - rho * rho * lattice.time(t)).sqrt();
                -root_gap * gh.expect(|z| g.eval(m + s * z) * z) / s
            });
            let sigma = spec.sigma_field(lattice)?;
            let theta = spec.theta_field(lattice)?;
            let factor = sign.factor();
            let h_tilde = h_perp_hat.zip_map(&sigma, |hp, s| -factor * root_gap * hp / s);

            let scaled = h_tilde.map(|h| h / gap);
            let driver = Driver::Shat {
                theta: &theta,
                sigma: &sigma,
                rho,
            };
            let gain = stochastic_integral(&scaled, &driver, lattice)?;
            let h_tilde_terminal = hat_terminal
                .iter()
                .zip(gain.terminal())
                .map(|(h, g)| h - g)
                .collect();
            Ok(TildeInputs {
                h_tilde,
                h_tilde_terminal,
                h_hat,
                h_perp_hat: Some(h_perp_hat),
                sign,
            })
        }
        PayoffSpec::Joint { label, .. } => Err(MvhError::Capability(format!(
            "payoff `{label}` depends jointly on w_T and w0_T; its tilde inputs need \
             E[D_t xi | F^w_t] with D the stochastic derivative, which is only \
             implemented for constant, g(w_T) and g(w0_T) claims"
        ))),
    }
}

/// Matrix-free operator `A` bound to a spec and lattice.
#[derive(Debug)]
pub struct MvhOperator<'a> {
    lattice: &'a ObservationLattice,
    theta: AdaptedField,
    rho: f64,
    gap: f64,
}

impl<'a> MvhOperator<'a> {
    pub fn new(spec: &DiffusionSpec, lattice: &'a ObservationLattice) -> Result<Self> {
        spec.validate()?;
        Ok(MvhOperator {
            lattice,
            theta: spec.theta_field(lattice)?,
            rho: spec.rho,
            gap: 1.0 - spec.rho_sq(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lattice.n_terminal()
    }

    /// Coefficient field `c_t = (theta_t Y_t + rho phi_t) / (1 - rho^2)`.
    pub fn coefficient(&self, martingale: &AdaptedField) -> AdaptedField {
        let phi = integrand_of(martingale, self.lattice);
        AdaptedField::predictable_from_fn(self.lattice, |t, i| {
            (self.theta.get(t, i) * martingale.get(t, i) + self.rho * phi.get(t, i)) / self.gap
        })
    }

    /// `(A Y)_T` for terminal values `Y_T`.
    pub fn apply(&self, terminal: &[f64]) -> Result<Vec<f64>> {
        if terminal.len() != self.dim() {
            return Err(MvhError::Shape {
                context: "apply_operator_A",
                expected: self.dim(),
                got: terminal.len(),
            });
        }
        let mut out = vec![0.0; terminal.len()];
        self.apply_into(terminal, &mut out);
        Ok(out)
    }

    fn apply_into(&self, terminal: &[f64], out: &mut [f64]) {
        let lat = self.lattice;
        let n = lat.n_steps();
        let dt = lat.dt();
        let scale = 0.5 / lat.sqrt_dt();

        let mut mart: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        mart[n] = terminal.to_vec();
        for t in (0..n).rev() {
            mart[t] = project(&mart[t + 1]);
        }

        let mut acc = vec![0.0];
        for t in 0..n {
            let theta = self.theta.level(t);
            let children = &mart[t + 1];
            let mut next = Vec::with_capacity(acc.len() * 2);
            for (i, &a) in acc.iter().enumerate() {
                let phi = (children[2 * i] - children[2 * i + 1]) * scale;
                let c = (theta[i] * mart[t][i] + self.rho * phi) / self.gap;
                let drift = theta[i] * dt;
                let noise = self.rho * lat.sqrt_dt();
                next.push(a + c * (drift + noise));
                next.push(a + c * (drift - noise));
            }
            acc = next;
        }
        out.copy_from_slice(&acc);
    }

    /// `(Id + A) Y`.
    fn apply_shifted(&self, x: &[f64], out: &mut [f64]) {
        self.apply_into(x, out);
        for (o, v) in out.iter_mut().zip(x) {
            *o += v;
        }
    }

    /// `(Y, A Y)` computed from the quadratic form.
    pub fn energy(&self, martingale: &AdaptedField) -> f64 {
        let c = self.coefficient(martingale);
        let dt = self.lattice.dt();
        c.levels()
            .map(|level| level.iter().map(|v| v * v).sum::<f64>() / level.len() as f64)
            .sum::<f64>()
            * self.gap
            * dt
    }
}

pub fn apply_operator_a(
    terminal: &[f64],
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
) -> Result<Vec<f64>> {
    MvhOperator::new(spec, lattice)?.apply(terminal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KrylovMethod {
    /// Conjugate gradients on `(Id + A)^T (Id + A) x = (Id + A)^T b`.
    #[default]
    NormalEquations,
    /// Plain conjugate gradients, valid because `A` is self-adjoint here.
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative residual tolerance `|b - (Id + A) x| / |b|`.
    pub tol: f64,
    /// Iteration cap; `None` means ten times the dimension.
    pub max_iter: Option<usize>,
    pub method: KrylovMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: DEFAULT_SOLVER_TOL,
            max_iter: None,
            method: KrylovMethod::NormalEquations,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OperatorSolution {
    /// The martingale `Y~`.
    pub y_tilde: AdaptedField,
    /// GKW integrand of `Y~` against `dw` (`phi~ = rho sigma psi~`).
    pub phi_tilde: AdaptedField,
    /// `psi~ = phi~ / (rho sigma)`, undefined when `rho = 0`.
    pub psi_tilde: Option<AdaptedField>,
    /// Right-hand side that was solved for, `H~ - x`.
    pub rhs: Vec<f64>,
    /// Final relative residual.
    pub residual_norm: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

impl OperatorSolution {
    pub fn y0(&self) -> f64 {
        self.y_tilde.get(0, 0)
    }
}

pub fn solve_martingale_equation(
    tilde: &TildeInputs,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
    opts: &SolverOptions,
) -> Result<OperatorSolution> {
    let op = MvhOperator::new(spec, lattice)?;
    let rhs: Vec<f64> = tilde
        .h_tilde_terminal
        .iter()
        .map(|h| h - spec.initial_capital)
        .collect();
    solve_with_rhs(&op, spec, lattice, rhs, opts)
}

/// Solves `(Id + A) xi = rhs` for an arbitrary right-hand side.
pub fn solve_with_rhs(
    op: &MvhOperator<'_>,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
    rhs: Vec<f64>,
    opts: &SolverOptions,
) -> Result<OperatorSolution> {
    if rhs.len() != op.dim() {
        return Err(MvhError::Shape {
            context: "solve_martingale_equation",
            expected: op.dim(),
            got: rhs.len(),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(MvhError::Domain("solver tolerance must be positive".into()));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * op.dim()).max(1);
    let (x, iterations, history) = match opts.method {
        KrylovMethod::NormalEquations => cgnr(op, lattice, &rhs, opts.tol, max_iter)?,
        KrylovMethod::ConjugateGradient => cg(op, lattice, &rhs, opts.tol, max_iter)?,
    };
    let residual_norm = *history.last().unwrap_or(&0.0);
    let y_tilde = martingale_from_terminal(&x, lattice)?;
    let phi_tilde = integrand_of(&y_tilde, lattice);
    let psi_tilde = if spec.rho != 0.0 {
        let sigma = spec.sigma_field(lattice)?;
        Some(phi_tilde.zip_map(&sigma, |p, s| p / (spec.rho * s)))
    } else {
        None
    };
    Ok(OperatorSolution {
        y_tilde,
        phi_tilde,
        psi_tilde,
        rhs,
        residual_norm,
        iterations,
        residual_history: history,
    })
}

fn relative_residual(
    op: &MvhOperator<'_>,
    lattice: &ObservationLattice,
    x: &[f64],
    b: &[f64],
    scratch: &mut [f64],
) -> (Vec<f64>, f64) {
    op.apply_shifted(x, scratch);
    let r: Vec<f64> = b.iter().zip(scratch.iter()).map(|(b, a)| b - a).collect();
    let bn = lattice.l2_norm(b);
    let rn = lattice.l2_norm(&r);
    (r, if bn > 0.0 { rn / bn } else { rn })
}

type KrylovOutcome = (Vec<f64>, usize, Vec<f64>);

fn cgnr(
    op: &MvhOperator<'_>,
    lattice: &ObservationLattice,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<KrylovOutcome> {
    let dim = b.len();
    let mut x = vec![0.0; dim];
    let mut history = Vec::new();
    if lattice.l2_norm(b) == 0.0 {
        history.push(0.0);
        return Ok((x, 0, history));
    }
    let mut scratch = vec![0.0; dim];
    let mut q = vec![0.0; dim];
    let mut s = vec![0.0; dim];
    let mut iterations = 0;
    // Outer loop restarts from the true residual if the recurrence drifts.
    loop {
        let (mut r, rel) = relative_residual(op, lattice, &x, b, &mut scratch);
        history.push(rel);
        if rel <= tol {
            return Ok((x, iterations, history));
        }
        if iterations >= max_iter {
            return Err(MvhError::NonConvergence {
                solver: "normal-equations conjugate gradients",
                iterations,
                residual: rel,
                history,
            });
        }
        let bn = lattice.l2_norm(b);
        // The adjoint of Id + A is itself.
        op.apply_shifted(&r, &mut s);
        let mut p = s.clone();
        let mut gamma = lattice.inner(&s, &s);
        while iterations < max_iter {
            iterations += 1;
            op.apply_shifted(&p, &mut q);
            let qq = lattice.inner(&q, &q);
            if qq == 0.0 {
                break;
            }
            let alpha = gamma / qq;
            for k in 0..dim {
                x[k] += alpha * p[k];
                r[k] -= alpha * q[k];
            }
            let rel = lattice.l2_norm(&r) / bn;
            history.push(rel);
            if rel <= tol * 0.5 {
                break;
            }
            op.apply_shifted(&r, &mut s);
            let gamma_new = lattice.inner(&s, &s);
            let beta = gamma_new / gamma;
            gamma = gamma_new;
            for k in 0..dim {
                p[k] = s[k] + beta * p[k];
            }
        }
    }
}

fn cg(
    op: &MvhOperator<'_>,
    lattice: &ObservationLattice,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<KrylovOutcome> {
    let dim = b.len();
    let mut x = vec![0.0; dim];
    let mut history = Vec::new();
    let bn = lattice.l2_norm(b);
    if bn == 0.0 {
        history.push(0.0);
        return Ok((x, 0, history));
    }
    let mut scratch = vec![0.0; dim];
    let mut q = vec![0.0; dim];
    let mut iterations = 0;
    loop {
        let (mut r, rel) = relative_residual(op, lattice, &x, b, &mut scratch);
        history.push(rel);
        if rel <= tol {
            return Ok((x, iterations, history));
        }
        if iterations >= max_iter {
            return Err(MvhError::NonConvergence {
                solver: "conjugate gradients",
                iterations,
                residual: rel,
                history,
            });
        }
        let mut p = r.clone();
        let mut rr = lattice.inner(&r, &r);
        while iterations < max_iter {
            iterations += 1;
            op.apply_shifted(&p, &mut q);
            let alpha = rr / lattice.inner(&p, &q);
            for k in 0..dim {
                x[k] += alpha * p[k];
                r[k] -= alpha * q[k];
            }
            let rr_new = lattice.inner(&r, &r);
            history.push(rr_new.sqrt() / bn);
            if rr_new.sqrt() / bn <= tol * 0.5 {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for k in 0..dim {
                p[k] = r[k] + beta * p[k];
            }
        }
    }
}

/// Optimal strategy `pi* = (h~ + lambda Y~ + rho^2 psi~) / (1 - rho^2)` per node,
/// written with `lambda = theta / sigma` and `rho^2 psi~ = rho phi~ / sigma`.
pub fn optimal_strategy(
    solution: &OperatorSolution,
    tilde: &TildeInputs,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
) -> Result<AdaptedField> {
    let theta = spec.theta_field(lattice)?;
    let sigma = spec.sigma_field(lattice)?;
    let gap = 1.0 - spec.rho_sq();
    let rho = spec.rho;
    Ok(AdaptedField::predictable_from_fn(lattice, |t, i| {
        let y = solution.y_tilde.get(t, i);
        let phi = solution.phi_tilde.get(t, i);
        let s = sigma.get(t, i);
        let ht = tilde.h_tilde.get(t, i);
        (ht + (theta.get(t, i) * y + rho * phi) / s) / gap
    }))
}

/// Projected wealth `x + sum pi dS^` along every path.
pub fn projected_wealth(
    pi: &AdaptedField,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
    x0: f64,
) -> Result<AdaptedField> {
    let theta = spec.theta_field(lattice)?;
    let sigma = spec.sigma_field(lattice)?;
    let driver = Driver::Shat {
        theta: &theta,
        sigma: &sigma,
        rho: spec.rho,
    };
    let gains = stochastic_integral(pi, &driver, lattice)?;
    Ok(gains.map(|g| x0 + g))
}

#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    /// `E[Y~_T H~] - E[Y~_T^2]`.
    pub lhs: f64,
    /// `E sum (theta Y~ + rho phi~)^2 / (1 - rho^2) dt`.
    pub rhs: f64,
    pub gap: f64,
    pub y_norm_sq: f64,
    pub h_norm_sq: f64,
}

impl EnergyReport {
    pub fn norm_bound_holds(&self) -> bool {
        self.y_norm_sq <= self.h_norm_sq * (1.0 + 1e-12) + 1e-300
    }
}

pub fn energy_identity(
    solution: &OperatorSolution,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
) -> Result<EnergyReport> {
    let op = MvhOperator::new(spec, lattice)?;
    let yt = solution.y_tilde.terminal();
    let lhs = lattice.inner(yt, &solution.rhs) - lattice.inner(yt, yt);
    let rhs = op.energy(&solution.y_tilde);
    Ok(EnergyReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        y_norm_sq: lattice.inner(yt, yt),
        h_norm_sq: lattice.inner(&solution.rhs, &solution.rhs),
    })
}
