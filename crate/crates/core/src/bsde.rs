//! Backward sweeps for the value processes `V`, `V^H`, the forward optimal
//! wealth, and the maps between this system and the operator equation.
//!
//! Integrands are stored against `dw`: a field `z` here corresponds to
//! `phi = z / (rho sigma)` against the projected martingale, so that
//! `rho^2 phi = rho z / sigma` and the drivers can be written with `theta`.
//!
//! The scheme for `dV = f(V, z) dt + z dw`, `V_T = 1`, is implicit in the value
//! and explicit in the integrand:
//!
//! ```text
//! V_t = E[V_{t+1} | node] - f(V_t, z_t) dt,   z_t = E[V_{t+1} dw | node] / dt,
//! f(v, z) = (theta v + rho z)^2 / (1 - rho^2 + rho^2 v).
//! ```

use crate::error::{MvhError, Result};
use crate::lattice::{AdaptedField, ObservationLattice};
use crate::model::DiffusionSpec;
use crate::operator::{projected_wealth, TildeInputs};

#[derive(Debug, Clone, Copy)]
pub struct BsdeOptions {
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl Default for BsdeOptions {
    fn default() -> Self {
        BsdeOptions {
            newton_tol: 1e-12,
            max_newton: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub v: AdaptedField,
    /// Integrand of `V` against `dw`.
    pub phi: AdaptedField,
    pub v_h: AdaptedField,
    /// Integrand of `V^H` against `dw`.
    pub phi_h: AdaptedField,
    pub pi_star: AdaptedField,
    pub x_hat: AdaptedField,
    /// Newton iterations spent at each node of the `V` sweep.
    pub newton_iters: Vec<Vec<u8>>,
}

#[inline]
fn children_stats(level: &[f64], i: usize, half_inv_sqrt_dt: f64) -> (f64, f64) {
    let up = level[2 * i];
    let down = level[2 * i + 1];
    (0.5 * (up + down), (up - down) * half_inv_sqrt_dt)
}

/// Solves for the value process `V` with `V_T = 1`.
pub fn solve_v(
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
    opts: &BsdeOptions,
) -> Result<(AdaptedField, AdaptedField, Vec<Vec<u8>>)> {
    spec.validate()?;
    let theta = spec.theta_field(lattice)?;
    let rho = spec.rho;
    let rho_sq = rho * rho;
    let gap = 1.0 - rho_sq;
    let dt = lattice.dt();
    let n = lattice.n_steps();
    let k = 0.5 / lattice.sqrt_dt();

    let mut v = AdaptedField::zeros(lattice);
    let mut phi = AdaptedField::predictable_zeros(lattice);
    let mut iters: Vec<Vec<u8>> = (0..n).map(|t| vec![0; 1 << t]).collect();
    v.level_mut(n).fill(1.0);

    for t in (0..n).rev() {
        for i in 0..lattice.n_nodes(t) {
            let (m, z) = children_stats(v.level(t + 1), i, k);
            let th = theta.get(t, i);
            let mut x = m;
            let mut used = 0;
            let mut resid = f64::INFINITY;
            for it in 0..=opts.max_newton {
                let denom = gap + rho_sq * x;
                if !(denom > 0.0) {
                    return Err(MvhError::ConditionE { rho_sq });
                }
                let a = th * x + rho * z;
                let f = a * a / denom;
                resid = x - m + dt * f;
                used = it;
                if resid.abs() <= opts.newton_tol {
                    break;
                }
                if it == opts.max_newton {
                    break;
                }
                let df = (2.0 * th * a * denom - rho_sq * a * a) / (denom * denom);
                x -= resid / (1.0 + dt * df);
            }
            if resid.abs() > opts.newton_tol {
                return Err(MvhError::Newton {
                    location: format!("V sweep, step {t}, node {i}"),
                    residual: resid,
                    iterations: used,
                });
            }
            if !(x > 0.0) {
                return Err(MvhError::Invariant(format!(
                    "value process V = {x} is not positive at step {t}, node {i}"
                )));
            }
            v.set(t, i, x);
            phi.set(t, i, z);
            iters[t][i] = used as u8;
        }
    }
    Ok((v, phi, iters))
}

/// Linear backward sweep for `V^H` with `V^H_T = H~` (claim minus nothing;
/// the initial capital enters through the forward wealth).
pub fn solve_vh(
    v: &AdaptedField,
    phi: &AdaptedField,
    tilde: &TildeInputs,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
) -> Result<(AdaptedField, AdaptedField)> {
    solve_vh_terminal(v, phi, &tilde.h_tilde_terminal, spec, lattice)
}

pub fn solve_vh_terminal(
    v: &AdaptedField,
    phi: &AdaptedField,
    terminal: &[f64],
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
) -> Result<(AdaptedField, AdaptedField)> {
    let n = lattice.n_steps();
    if terminal.len() != lattice.n_terminal() {
        return Err(MvhError::Shape {
            context: "solve_VH",
            expected: lattice.n_terminal(),
            got: terminal.len(),
        });
    }
    let theta = spec.theta_field(lattice)?;
    let rho = spec.rho;
    let rho_sq = rho * rho;
    let gap = 1.0 - rho_sq;
    let dt = lattice.dt();
    let k = 0.5 / lattice.sqrt_dt();

    let mut vh = AdaptedField::zeros(lattice);
    let mut phi_h = AdaptedField::predictable_zeros(lattice);
    vh.level_mut(n).copy_from_slice(terminal);
    for t in (0..n).rev() {
        for i in 0..lattice.n_nodes(t) {
            let (m, zh) = children_stats(vh.level(t + 1), i, k);
            let th = theta.get(t, i);
            let vt = v.get(t, i);
            let a = (th * vt + rho * phi.get(t, i)) / (gap + rho_sq * vt);
            let denom = 1.0 + dt * a * th;
            if denom.abs() < f64::EPSILON {
                return Err(MvhError::Invariant(format!(
                    "V^H step is singular at step {t}, node {i}"
                )));
            }
            vh.set(t, i, (m - dt * a * rho * zh) / denom);
            phi_h.set(t, i, zh);
        }
    }
    Ok((vh, phi_h))
}

/// Forward recursion for the optimal strategy and projected wealth, `X^_0 = x`.
pub fn fb_strategy(
    v: &AdaptedField,
    phi: &AdaptedField,
    v_h: &AdaptedField,
    phi_h: &AdaptedField,
    x: f64,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
) -> Result<(AdaptedField, AdaptedField)> {
    let theta = spec.theta_field(lattice)?;
    let sigma = spec.sigma_field(lattice)?;
    let rho = spec.rho;
    let rho_sq = rho * rho;
    let gap = 1.0 - rho_sq;
    let dt = lattice.dt();
    let n = lattice.n_steps();

    let mut pi = AdaptedField::predictable_zeros(lattice);
    let mut xh = AdaptedField::zeros(lattice);
    xh.set(0, 0, x);
    for t in 0..n {
        for i in 0..lattice.n_nodes(t) {
            let th = theta.get(t, i);
            let s = sigma.get(t, i);
            let vt = v.get(t, i);
            let xt = xh.get(t, i);
            let num =
                th * v_h.get(t, i) + rho * phi_h.get(t, i) - xt * (th * vt + rho * phi.get(t, i));
            let p = num / (s * (gap + rho_sq * vt));
            pi.set(t, i, p);
            for child in [2 * i, 2 * i + 1] {
                let ds = s * (th * dt + rho * lattice.dw_into(child));
                xh.set(t + 1, child, xt + p * ds);
            }
        }
    }
    Ok((pi, xh))
}

/// `Y~ = V^H - X^ V` and `phi~ = z^H - rho sigma V pi* - z X^` (integrands
/// against `dw`).
#[allow(clippy::too_many_arguments)]
pub fn reconstruct_operator_solution(
    v: &AdaptedField,
    phi: &AdaptedField,
    v_h: &AdaptedField,
    phi_h: &AdaptedField,
    pi_star: &AdaptedField,
    x_hat: &AdaptedField,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
) -> Result<(AdaptedField, AdaptedField)> {
    let sigma = spec.sigma_field(lattice)?;
    let rho = spec.rho;
    let y = AdaptedField::from_fn(lattice, |t, i| {
        v_h.get(t, i) - x_hat.get(t, i) * v.get(t, i)
    });
    let phi_tilde = AdaptedField::predictable_from_fn(lattice, |t, i| {
        phi_h.get(t, i)
            - rho * sigma.get(t, i) * v.get(t, i) * pi_star.get(t, i)
            - phi.get(t, i) * x_hat.get(t, i)
    });
    Ok((y, phi_tilde))
}

/// Full pipeline: `V`, `V^H`, then the forward strategy from `X^_0 = x`.
pub fn solve_bsde_system(
    spec: &DiffusionSpec,
    tilde: &TildeInputs,
    lattice: &ObservationLattice,
    opts: &BsdeOptions,
) -> Result<BsdeSolution> {
    let (v, phi, newton_iters) = solve_v(spec, lattice, opts)?;
    let (v_h, phi_h) = solve_vh(&v, &phi, tilde, spec, lattice)?;
    let (pi_star, x_hat) =
        fb_strategy(&v, &phi, &v_h, &phi_h, spec.initial_capital, spec, lattice)?;
    Ok(BsdeSolution {
        v,
        phi,
        v_h,
        phi_h,
        pi_star,
        x_hat,
        newton_iters,
    })
}

#[derive(Debug, Clone)]
pub struct PositivityReport {
    /// Smallest node value of `Y~`.
    pub min_y: f64,
    /// Smallest node value of `(c - X^) - Y~`.
    pub min_dominance: f64,
    /// Nodes `(step, node)` where `c - X^ <= 0`.
    pub violations: Vec<(usize, usize)>,
}

impl PositivityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.min_y > 0.0
    }
}

/// `V~ = Y~ / (c - X^)` with `X^ = sum pi* dS^` from zero.
pub fn value_process(
    y_tilde: &AdaptedField,
    pi_star: &AdaptedField,
    c: f64,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
) -> Result<(AdaptedField, PositivityReport)> {
    if !(c > 0.0) {
        return Err(MvhError::Domain(format!(
            "value process needs a strictly positive constant claim, got {c}"
        )));
    }
    let x_hat = projected_wealth(pi_star, spec, lattice, 0.0)?;
    let mut violations = Vec::new();
    let mut min_y = f64::INFINITY;
    let mut min_dom = f64::INFINITY;
    let v = AdaptedField::from_fn(lattice, |t, i| {
        let cap = c - x_hat.get(t, i);
        let y = y_tilde.get(t, i);
        min_y = min_y.min(y);
        min_dom = min_dom.min(cap - y);
        if cap <= 0.0 {
            violations.push((t, i));
            f64::NAN
        } else {
            y / cap
        }
    });
    Ok((
        v,
        PositivityReport {
            min_y,
            min_dominance: min_dom,
            violations,
        },
    ))
}

/// Per-node one-step residual of the `V` equation evaluated on a candidate
/// adapted field `u`, with the driver taken at the left node:
/// `E[u_{t+1}] - u_t - f(u_t, z_t) dt`.
pub fn bsde_residual(
    u: &AdaptedField,
    spec: &DiffusionSpec,
    lattice: &ObservationLattice,
) -> Result<AdaptedField> {
    let theta = spec.theta_field(lattice)?;
    let rho = spec.rho;
    let rho_sq = rho * rho;
    let gap = 1.0 - rho_sq;
    let dt = lattice.dt();
    let k = 0.5 / lattice.sqrt_dt();
    Ok(AdaptedField::predictable_from_fn(lattice, |t, i| {
        let (m, z) = children_stats(u.level(t + 1), i, k);
        let ut = u.get(t, i);
        let a = theta.get(t, i) * ut + rho * z;
        m - ut - a * a / (gap + rho_sq * ut) * dt
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, martingale_from_terminal, TimeGrid};
    use crate::model::{Coefficient, HTildeSign, PayoffFn, PayoffSpec};
    use crate::operator::compute_tilde_inputs;

    fn lat(n: usize) -> ObservationLattice {
        build_lattice(TimeGrid::new(n, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_drift_value_is_one() {
        let l = lat(6);
        let s = DiffusionSpec::new(0.0, 0.7, 1.0, PayoffSpec::Constant(1.0));
        let (v, phi, _) = solve_v(&s, &l, &BsdeOptions::default()).unwrap();
        assert!(v.values().all(|x| x == 1.0));
        assert!(phi.values().all(|x| x == 0.0));
    }

    #[test]
    fn value_converges_to_half() {
        let s = DiffusionSpec::new(1.0, 0.0, 1.0, PayoffSpec::Constant(1.0));
        let mut prev = f64::INFINITY;
        for n in [8, 12, 16] {
            let (v, _, _) = solve_v(&s, &lat(n), &BsdeOptions::default()).unwrap();
            let err = (v.get(0, 0) - 0.5).abs();
            assert!(err < prev);
            prev = err;
        }
        // first-order scheme: error ~ 0.17 / n
        assert!(prev < 0.02);
    }

    #[test]
    fn value_flat_after_drift_stops() {
        let l = lat(8);
        let s = DiffusionSpec::new(
            Coefficient::curve(|t| if t < 0.5 { 1.0 } else { 0.0 }),
            0.6,
            1.0,
            PayoffSpec::Constant(1.0),
        );
        let (v, _, _) = solve_v(&s, &l, &BsdeOptions::default()).unwrap();
        for t in 4..=8 {
            assert!(v.level(t).iter().all(|&x| x == 1.0));
        }
        assert!(v.get(0, 0) < 1.0);
    }

    #[test]
    fn vh_is_scaled_v_for_constant_claim() {
        let l = lat(8);
        let s = DiffusionSpec::new(
            Coefficient::field(|_, x| 1.0 + 0.5 * x.tanh()),
            0.5,
            1.0,
            PayoffSpec::Constant(2.5),
        );
        let tilde = compute_tilde_inputs(&s, &l, HTildeSign::Standard).unwrap();
        let (v, phi, _) = solve_v(&s, &l, &BsdeOptions::default()).unwrap();
        let (vh, _) = solve_vh(&v, &phi, &tilde, &s, &l).unwrap();
        assert!(vh.max_abs_diff(&v.map(|x| 2.5 * x)) < 1e-10);
    }

    #[test]
    fn vh_zero_and_driftless() {
        let l = lat(6);
        let s = DiffusionSpec::new(1.0, 0.5, 1.0, PayoffSpec::Constant(0.0));
        let (v, phi, _) = solve_v(&s, &l, &BsdeOptions::default()).unwrap();
        let (vh, _) = solve_vh_terminal(&v, &phi, &vec![0.0; 64], &s, &l).unwrap();
        assert!(vh.values().all(|x| x == 0.0));

        let s0 = DiffusionSpec::new(
            0.0,
            0.5,
            1.0,
            PayoffSpec::Hidden(PayoffFn::new("x^2", |x| x * x)),
        );
        let tilde = compute_tilde_inputs(&s0, &l, HTildeSign::Standard).unwrap();
        let (v0, phi0, _) = solve_v(&s0, &l, &BsdeOptions::default()).unwrap();
        let (vh0, _) = solve_vh(&v0, &phi0, &tilde, &s0, &l).unwrap();
        let mart = martingale_from_terminal(&tilde.h_tilde_terminal, &l).unwrap();
        assert!(vh0.max_abs_diff(&mart) < 1e-13);
    }

    #[test]
    fn already_hedged() {
        let l = lat(6);
        let s =
            DiffusionSpec::new(0.0, 0.4, 1.0, PayoffSpec::Constant(3.0)).with_initial_capital(3.0);
        let tilde = compute_tilde_inputs(&s, &l, HTildeSign::Standard).unwrap();
        let sol = solve_bsde_system(&s, &tilde, &l, &BsdeOptions::default()).unwrap();
        assert!(sol.pi_star.values().all(|p| p.abs() < 1e-14));
        assert!(sol.x_hat.values().all(|x| (x - 3.0).abs() < 1e-14));
    }

    #[test]
    fn strategy_at_zero_matches_closed_form() {
        let s = DiffusionSpec::new(1.0, 0.0, 1.0, PayoffSpec::Constant(1.0));
        let l = lat(16);
        let tilde = compute_tilde_inputs(&s, &l, HTildeSign::Standard).unwrap();
        let sol = solve_bsde_system(&s, &tilde, &l, &BsdeOptions::default()).unwrap();
        assert!((sol.pi_star.get(0, 0) - 0.5).abs() < 0.02);
        assert_eq!(sol.pi_star.get(0, 0), sol.v_h.get(0, 0));
    }

    #[test]
    fn reconstruction_trivial_cases() {
        let l = lat(5);
        let s = DiffusionSpec::new(0.0, 0.5, 1.0, PayoffSpec::Constant(1.7));
        let tilde = compute_tilde_inputs(&s, &l, HTildeSign::Standard).unwrap();
        let b = solve_bsde_system(&s, &tilde, &l, &BsdeOptions::default()).unwrap();
        let (y, _) = reconstruct_operator_solution(
            &b.v, &b.phi, &b.v_h, &b.phi_h, &b.pi_star, &b.x_hat, &s, &l,
        )
        .unwrap();
        assert!(y.values().all(|v| (v - 1.7).abs() < 1e-14));

        let s0 = DiffusionSpec::new(1.0, 0.5, 1.0, PayoffSpec::Constant(0.0));
        let tilde0 = compute_tilde_inputs(&s0, &l, HTildeSign::Standard).unwrap();
        let b0 = solve_bsde_system(&s0, &tilde0, &l, &BsdeOptions::default()).unwrap();
        let (y0, _) = reconstruct_operator_solution(
            &b0.v,
            &b0.phi,
            &b0.v_h,
            &b0.phi_h,
            &b0.pi_star,
            &b0.x_hat,
            &s0,
            &l,
        )
        .unwrap();
        assert!(y0.values().all(|v| v == 0.0));
    }

    #[test]
    fn value_process_rejects_nonpositive_claim() {
        let l = lat(2);
        let s = DiffusionSpec::new(0.0, 0.5, 1.0, PayoffSpec::Constant(0.0));
        let y = AdaptedField::zeros(&l);
        let pi = AdaptedField::predictable_zeros(&l);
        assert!(value_process(&y, &pi, 0.0, &s, &l).is_err());
    }

    #[test]
    fn value_process_without_drift() {
        let l = lat(4);
        let s = DiffusionSpec::new(0.0, 0.5, 1.0, PayoffSpec::Constant(2.0));
        let y = AdaptedField::from_fn(&l, |_, _| 2.0);
        let pi = AdaptedField::predictable_zeros(&l);
        let (v, rep) = value_process(&y, &pi, 2.0, &s, &l).unwrap();
        assert!(v.values().all(|x| x == 1.0));
        assert!(rep.is_clean());
        assert_eq!(rep.min_dominance, 0.0);
    }
}
