//! Markov case: the value PDE
//!
//! ```text
//! u_t + u_xx / 2 = (theta u + rho u_x)^2 / (1 - rho^2 + rho^2 u),   u(T, x) = 1,
//! ```
//!
//! its deterministic-`theta` reduction through the root `nu(rho, alpha)` of
//! `(1 - rho^2)/u - rho^2 ln u = alpha`, the `rho = 0` closed forms, the
//! pathwise strategy representation and a Feynman–Kac Monte Carlo check.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{MvhError, Result};
use crate::model::{check_rho, Coefficient};
use crate::montecarlo::rng::{normal, path_stream};
use crate::quadrature::integrate;

pub const DEFAULT_NX: usize = 401;
pub const DEFAULT_NT: usize = 400;
/// Half-width of the default spatial domain in units of `sqrt(T)`.
pub const DEFAULT_HALF_WIDTH: f64 = 6.0;
pub const NU_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeParams {
    pub nx: usize,
    /// Number of time points, including both ends.
    pub nt: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl PdeParams {
    pub fn for_horizon(horizon: f64) -> Self {
        let h = DEFAULT_HALF_WIDTH * horizon.sqrt();
        PdeParams {
            nx: DEFAULT_NX,
            nt: DEFAULT_NT,
            x_min: -h,
            x_max: h,
            newton_tol: 1e-12,
            max_newton: 50,
        }
    }

    pub fn with_size(mut self, nx: usize, nt: usize) -> Self {
        self.nx = nx;
        self.nt = nt;
        self
    }

    /// Both step sizes halved.
    pub fn refined(self) -> Self {
        self.with_size(2 * self.nx - 1, 2 * self.nt - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.nt < 2 {
            return Err(MvhError::Domain(format!(
                "pde grid needs nx >= 3 and nt >= 2, got nx={}, nt={}",
                self.nx, self.nt
            )));
        }
        if !(self.x_min < self.x_max) || !self.x_min.is_finite() || !self.x_max.is_finite() {
            return Err(MvhError::Domain(format!(
                "pde bounds must satisfy x_min < x_max, got [{}, {}]",
                self.x_min, self.x_max
            )));
        }
        if !(self.newton_tol > 0.0) {
            return Err(MvhError::Domain("pde newton_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Solution values on a uniform `(t, x)` grid; row `k` is time `k * dt`.
#[derive(Debug, Clone)]
pub struct PdeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
    pub dx: f64,
    pub dt: f64,
    u: Vec<f64>,
}

impl PdeGrid {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.u[k * self.nx..(k + 1) * self.nx]
    }

    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.u[k * self.nx + j]
    }

    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.nt {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn x(&self, j: usize) -> f64 {
        if j + 1 == self.nx {
            self.x_max
        } else {
            self.x_min + j as f64 * self.dx
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    fn locate(&self, t: f64, x: f64) -> Result<(usize, f64, usize, f64)> {
        let eps = 1e-12;
        if !(x >= self.x_min - eps && x <= self.x_max + eps)
            || !(t >= -eps && t <= self.horizon + eps)
        {
            return Err(MvhError::Extrapolation {
                t,
                x,
                x_min: self.x_min,
                x_max: self.x_max,
            });
        }
        let s = ((t / self.dt).max(0.0)).min((self.nt - 1) as f64);
        let k = (s.floor() as usize).min(self.nt - 2);
        let r = ((x - self.x_min) / self.dx).clamp(0.0, (self.nx - 1) as f64);
        let j = (r.floor() as usize).min(self.nx - 2);
        Ok((k, s - k as f64, j, r - j as f64))
    }

    fn slope(&self, k: usize, j: usize) -> f64 {
        let row = self.row(k);
        if j == 0 || j + 1 == self.nx {
            0.0
        } else {
            (row[j + 1] - row[j - 1]) / (2.0 * self.dx)
        }
    }

    /// Bilinear interpolation of `u` and of its central-difference slope.
    pub fn eval(&self, t: f64, x: f64) -> Result<(f64, f64)> {
        let (k, a, j, b) = self.locate(t, x)?;
        let bil = |f: &dyn Fn(usize, usize) -> f64| {
            (1.0 - a) * ((1.0 - b) * f(k, j) + b * f(k, j + 1))
                + a * ((1.0 - b) * f(k + 1, j) + b * f(k + 1, j + 1))
        };
        Ok((bil(&|k, j| self.value(k, j)), bil(&|k, j| self.slope(k, j))))
    }

    pub fn interpolate(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.eval(t, x)?.0)
    }

    /// Largest spread `max_x u - min_x u` over all time rows.
    pub fn max_spread(&self) -> f64 {
        (0..self.nt)
            .map(|k| {
                let row = self.row(k);
                let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Header `nx=..,nt=..,x_min=..,x_max=..,t_min=0,t_max=T`, then one row of
    /// `nx` values per time point in increasing time.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "nx={},nt={},x_min={},x_max={},t_min=0,t_max={}",
            self.nx, self.nt, self.x_min, self.x_max, self.horizon
        )?;
        let mut line = String::new();
        for k in 0..self.nt {
            line.clear();
            for (j, v) in self.row(k).iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<PdeGrid> {
        let bad = |m: String| MvhError::Domain(format!("grid dump: {m}"));
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
        let mut nx = None;
        let mut nt = None;
        let mut x_min = None;
        let mut x_max = None;
        let mut t_max = None;
        for kv in header.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header field `{kv}`")))?;
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("{k}: {e}")))
            };
            match k.trim() {
                "nx" => nx = Some(num(v)? as usize),
                "nt" => nt = Some(num(v)? as usize),
                "x_min" => x_min = Some(num(v)?),
                "x_max" => x_max = Some(num(v)?),
                "t_max" => t_max = Some(num(v)?),
                _ => {}
            }
        }
        let (nx, nt) = (
            nx.ok_or_else(|| bad("missing nx".into()))?,
            nt.ok_or_else(|| bad("missing nt".into()))?,
        );
        let (x_min, x_max) = (
            x_min.ok_or_else(|| bad("missing x_min".into()))?,
            x_max.ok_or_else(|| bad("missing x_max".into()))?,
        );
        let horizon = t_max.ok_or_else(|| bad("missing t_max".into()))?;
        let mut u = Vec::with_capacity(nx * nt);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for v in line.split(',') {
                u.push(v.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?);
            }
        }
        if u.len() != nx * nt || nx < 2 || nt < 2 {
            return Err(bad(format!(
                "expected {}x{} values, found {}",
                nt,
                nx,
                u.len()
            )));
        }
        Ok(PdeGrid {
            x_min,
            x_max,
            nx,
            nt,
            horizon,
            dx: (x_max - x_min) / (nx - 1) as f64,
            dt: horizon / (nt - 1) as f64,
            u,
        })
    }
}

/// Nonlinear driver `(theta u + rho p)^2 / (1 - rho^2 + rho^2 u)` and its
/// partial derivatives in `u` and `p`.
#[inline]
fn driver(theta: f64, rho: f64, u: f64, p: f64) -> (f64, f64, f64) {
    let rho_sq = rho * rho;
    let d = 1.0 - rho_sq + rho_sq * u;
    let a = theta * u + rho * p;
    let f = a * a / d;
    let fu = (2.0 * theta * a * d - rho_sq * a * a) / (d * d);
    let fp = 2.0 * rho * a / d;
    (f, fu, fp)
}

// Spatial operator L(u) = u_xx / 2 - F(u, u_x) with reflecting ghost nodes,
// written into `out`. When `jac` is given, also fills the tridiagonal Jacobian.
fn spatial(
    u: &[f64],
    theta: &[f64],
    rho: f64,
    dx: f64,
    out: &mut [f64],
    mut jac: Option<(&mut [f64], &mut [f64], &mut [f64])>,
) {
    let n = u.len();
    let inv_dx2 = 1.0 / (dx * dx);
    let inv_2dx = 0.5 / dx;
    for i in 0..n {
        let (ul, ur) = match i {
            0 => (u[1], u[1]),
            _ if i + 1 == n => (u[n - 2], u[n - 2]),
            _ => (u[i - 1], u[i + 1]),
        };
        let p = (ur - ul) * inv_2dx;
        let (f, fu, fp) = driver(theta[i], rho, u[i], p);
        out[i] = 0.5 * (ul - 2.0 * u[i] + ur) * inv_dx2 - f;
        if let Some((lo, di, up)) = jac.as_mut() {
            let dl = 0.5 * inv_dx2 + fp * inv_2dx;
            let dr = 0.5 * inv_dx2 - fp * inv_2dx;
            di[i] = -inv_dx2 - fu;
            lo[i] = 0.0;
            up[i] = 0.0;
            if i == 0 {
                up[i] = dl + dr;
            } else if i + 1 == n {
                lo[i] = dl + dr;
            } else {
                lo[i] = dl;
                up[i] = dr;
            }
        }
    }
}

/// Solves `lo[i] x[i-1] + di[i] x[i] + up[i] x[i+1] = rhs[i]` in place.
fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = di.len();
    scratch[0] = up[0] / di[0];
    rhs[0] /= di[0];
    for i in 1..n {
        let m = di[i] - lo[i] * scratch[i - 1];
        scratch[i] = if i + 1 < n { up[i] / m } else { 0.0 };
        rhs[i] = (rhs[i] - lo[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Crank–Nicolson in reversed time with a Newton solve per step.
pub fn solve_value_pde(
    theta: &Coefficient,
    rho: f64,
    horizon: f64,
    params: &PdeParams,
) -> Result<PdeGrid> {
    check_rho(rho)?;
    params.validate()?;
    if !(horizon > 0.0) {
        return Err(MvhError::Domain(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let nx = params.nx;
    let nt = params.nt;
    let dx = (params.x_max - params.x_min) / (nx - 1) as f64;
    let dt = horizon / (nt - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|j| params.x_min + j as f64 * dx).collect();
    let theta_row = |t: f64| -> Result<Vec<f64>> {
        let row: Vec<f64> = xs.iter().map(|&x| theta.eval(t, x)).collect();
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(MvhError::Domain(format!(
                "theta is not finite at t={t} ({bad})"
            )));
        }
        Ok(row)
    };

    let mut u = vec![0.0; nx * nt];
    u[(nt - 1) * nx..].fill(1.0);
    let mut th_next = theta_row(horizon)?;
    let mut l_old = vec![0.0; nx];
    let mut l_new = vec![0.0; nx];
    let mut g = vec![0.0; nx];
    let (mut lo, mut di, mut up, mut scratch) =
        (vec![0.0; nx], vec![0.0; nx], vec![0.0; nx], vec![0.0; nx]);
    let half = 0.5 * dt;

    for k in (0..nt - 1).rev() {
        let t = if k == 0 { 0.0 } else { k as f64 * dt };
        let th = theta_row(t)?;
        let (head, tail) = u.split_at_mut((k + 1) * nx);
        let known = &tail[..nx];
        let cur = &mut head[k * nx..];
        spatial(known, &th_next, rho, dx, &mut l_old, None);
        cur.copy_from_slice(known);
        let mut it = 0;
        loop {
            spatial(
                cur,
                &th,
                rho,
                dx,
                &mut l_new,
                Some((&mut lo, &mut di, &mut up)),
            );
            let mut resid = 0.0f64;
            for i in 0..nx {
                g[i] = cur[i] - known[i] - half * (l_new[i] + l_old[i]);
                resid = resid.max(g[i].abs());
            }
            if resid <= params.newton_tol {
                break;
            }
            if it == params.max_newton || !resid.is_finite() {
                return Err(MvhError::Newton {
                    location: format!("pde time step {k} (t = {t})"),
                    residual: resid,
                    iterations: it,
                });
            }
            for i in 0..nx {
                lo[i] *= -half;
                up[i] *= -half;
                di[i] = 1.0 - half * di[i];
            }
            thomas(&lo, &di, &up, &mut g, &mut scratch);
            for i in 0..nx {
                cur[i] -= g[i];
            }
            it += 1;
        }
        if let Some(j) = cur.iter().position(|&v| !(v > 0.0)) {
            return Err(MvhError::Invariant(format!(
                "pde solution u = {} is not positive at t = {t}, x = {}",
                cur[j], xs[j]
            )));
        }
        th_next = th;
    }
    Ok(PdeGrid {
        x_min: params.x_min,
        x_max: params.x_max,
        nx,
        nt,
        horizon,
        dx,
        dt,
        u,
    })
}

/// Unique positive root of `(1 - rho^2)/u - rho^2 ln u = alpha`.
pub fn nu_root(rho: f64, alpha: f64) -> Result<f64> {
    check_rho(rho)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(MvhError::Domain(format!("nu needs alpha > 0, got {alpha}")));
    }
    let rho_sq = rho * rho;
    let gap = 1.0 - rho_sq;
    if rho_sq == 0.0 {
        return Ok(1.0 / alpha);
    }
    let f = |u: f64| gap / u - rho_sq * u.ln() - alpha;
    let df = |u: f64| -gap / (u * u) - rho_sq / u;
    // f is strictly decreasing from +inf at 0+.
    let (mut lo, mut hi) = (1.0, 1.0);
    if f(1.0) > 0.0 {
        while f(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
    } else {
        while f(lo) <= 0.0 {
            hi = lo;
            lo *= 0.5;
        }
    }
    for _ in 0..60 {
        if (hi - lo) <= 1e-6 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut u = 0.5 * (lo + hi);
    for _ in 0..100 {
        let fu = f(u);
        if fu.abs() <= NU_TOL {
            return Ok(u);
        }
        if fu > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let next = u - fu / df(u);
        u = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(u)
}

fn require_deterministic(theta: &Coefficient) -> Result<()> {
    if theta.is_x_independent() {
        Ok(())
    } else {
        Err(MvhError::Domain(
            "this formula needs a deterministic theta(t), got a function of (t, x)".into(),
        ))
    }
}

/// `int_t^T theta(s)^2 ds` by composite Simpson.
pub fn theta_energy(theta: &Coefficient, t: f64, horizon: f64) -> f64 {
    integrate(|s| theta.eval(s, 0.0).powi(2), t, horizon)
}

/// `u(t) = nu(rho, 1 - rho^2 + int_t^T theta^2)` at each requested time.
pub fn ode_u(theta: &Coefficient, rho: f64, times: &[f64], horizon: f64) -> Result<Vec<f64>> {
    require_deterministic(theta)?;
    let gap = 1.0 - rho * rho;
    times
        .iter()
        .map(|&t| nu_root(rho, gap + theta_energy(theta, t, horizon)))
        .collect()
}

/// Largest `|u(t_k, x) - ode_u(t_k)|` over the grid, per time row.
pub fn ode_gap(grid: &PdeGrid, theta: &Coefficient, rho: f64) -> Result<Vec<(f64, f64)>> {
    let times: Vec<f64> = (0..grid.nt).map(|k| grid.time(k)).collect();
    let exact = ode_u(theta, rho, &times, grid.horizon)?;
    Ok((0..grid.nt)
        .map(|k| {
            let e = exact[k];
            (
                times[k],
                grid.row(k)
                    .iter()
                    .map(|v| (v - e).abs())
                    .fold(0.0, f64::max),
            )
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ClosedFormRho0 {
    pub y0: f64,
    /// Martingale integrand of `Y~`, zero for a constant claim.
    pub phi: Vec<f64>,
    /// Optimal strategy at each requested time.
    pub pi: Vec<f64>,
}

/// `rho = 0`, deterministic `theta`, constant claim `c`:
/// `Y~_0 = c / (1 + int_0^T theta^2)` and `pi*_t = theta_t Y~_0 / sigma_t`.
pub fn closed_form_rho0(
    theta: &Coefficient,
    sigma: &Coefficient,
    c: f64,
    times: &[f64],
    horizon: f64,
) -> Result<ClosedFormRho0> {
    require_deterministic(theta)?;
    let y0 = c / (1.0 + theta_energy(theta, 0.0, horizon));
    let pi = times
        .iter()
        .map(|&t| theta.eval(t, 0.0) * y0 / sigma.eval(t, 0.0))
        .collect();
    Ok(ClosedFormRho0 {
        y0,
        phi: vec![0.0; times.len()],
        pi,
    })
}

#[derive(Debug, Clone)]
pub struct MarkovPath {
    /// `Y~` at every path time.
    pub y_tilde: Vec<f64>,
    /// `pi*` on every step (one fewer than `y_tilde`).
    pub pi_star: Vec<f64>,
}

/// Evaluates `Y~_t = c u(t, w_t) E_t` and `pi*_t = c g_t E_t / sigma_t` along
/// an observed path `w_0, .., w_n` on a uniform time grid, where
/// `g = (theta u + rho u_x) / (1 - rho^2 + rho^2 u)` and `E` is the stochastic
/// exponential of `-int g (theta ds + rho dw)`.
pub fn markov_representation(
    grid: &PdeGrid,
    w_path: &[f64],
    theta: &Coefficient,
    sigma: &Coefficient,
    rho: f64,
    c: f64,
) -> Result<MarkovPath> {
    if w_path.len() < 2 {
        return Err(MvhError::Shape {
            context: "markov_representation path",
            expected: 2,
            got: w_path.len(),
        });
    }
    let n = w_path.len() - 1;
    let dt = grid.horizon / n as f64;
    let rho_sq = rho * rho;
    let mut log_e = 0.0f64;
    let mut y = Vec::with_capacity(n + 1);
    let mut pi = Vec::with_capacity(n);
    for k in 0..=n {
        let t = if k == n { grid.horizon } else { k as f64 * dt };
        let x = w_path[k];
        let (u, ux) = grid.eval(t, x)?;
        let e = log_e.exp();
        y.push(c * u * e);
        if k == n {
            break;
        }
        let th = theta.eval(t, x);
        let g = (th * u + rho * ux) / (1.0 - rho_sq + rho_sq * u);
        pi.push(c * g * e / sigma.eval(t, x));
        let dw = w_path[k + 1] - x;
        log_e += -g * (th * dt + rho * dw) - 0.5 * rho_sq * g * g * dt;
    }
    Ok(MarkovPath {
        y_tilde: y,
        pi_star: pi,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FeynmanKacEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_steps: usize,
}

/// Monte Carlo estimate of `E[E_{tT}(int g (theta ds + rho dw)) | w_t = x]`
/// with `g = -(theta u + rho u_x)/(1 - rho^2 + rho^2 u)` read off the grid.
/// Euler steps; the `ds` parts use the trapezoid rule. Paths leaving the
/// grid see the boundary values.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_check(
    grid: &PdeGrid,
    theta: &Coefficient,
    rho: f64,
    t: f64,
    x: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<FeynmanKacEstimate> {
    check_rho(rho)?;
    if n_steps == 0 || n_paths < 2 {
        return Err(MvhError::Domain(
            "feynman-kac check needs n_steps >= 1 and n_paths >= 2".into(),
        ));
    }
    grid.eval(t, x)?;
    let rho_sq = rho * rho;
    let span = grid.horizon - t;
    let dt = span / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let g_at = |s: f64, w: f64| -> (f64, f64) {
        let wc = w.clamp(grid.x_min, grid.x_max);
        let (u, ux) = grid
            .eval(s.min(grid.horizon), wc)
            .expect("clamped point lies on the grid");
        let th = theta.eval(s, w);
        (-(th * u + rho * ux) / (1.0 - rho_sq + rho_sq * u), th)
    };
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_stream(seed, p);
            let mut w = x;
            let mut log_e = 0.0f64;
            let (mut g, mut th) = g_at(t, w);
            for k in 0..n_steps {
                let s_next = if k + 1 == n_steps {
                    grid.horizon
                } else {
                    t + (k + 1) as f64 * dt
                };
                let dw = sqrt_dt * normal(&mut rng);
                let w_next = w + dw;
                let (g_next, th_next) = g_at(s_next, w_next);
                let drift = 0.5 * (g * th + g_next * th_next) * dt;
                let corr = 0.25 * rho_sq * (g * g + g_next * g_next) * dt;
                log_e += drift + rho * g * dw - corr;
                w = w_next;
                g = g_next;
                th = th_next;
            }
            log_e.exp()
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(FeynmanKacEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        n_paths,
        n_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coefficient;

    fn params(nx: usize, nt: usize) -> PdeParams {
        PdeParams::for_horizon(1.0).with_size(nx, nt)
    }

    // Independent bisection on the defining identity.
    fn nu_bisect(rho_sq: f64, alpha: f64) -> f64 {
        let f = |u: f64| (1.0 - rho_sq) / u - rho_sq * u.ln() - alpha;
        let (mut lo, mut hi) = (1e-12, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn nu_examples() {
        assert!((nu_root(0.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        for rho in [0.0, 0.3, -0.7, 0.99] {
            assert!((nu_root(rho, 1.0 - rho * rho).unwrap() - 1.0).abs() < 1e-12);
        }
        let r = 0.5f64.sqrt();
        let v = nu_root(r, 2.0).unwrap();
        assert!((v - nu_bisect(0.5, 2.0)).abs() < 1e-12);
        assert!((v - 0.3417).abs() < 5e-5);
        assert!(matches!(nu_root(0.5, 0.0), Err(MvhError::Domain(_))));
        assert!(nu_root(1.0, 1.0).is_err());
    }

    #[test]
    fn nu_is_decreasing() {
        let mut prev = f64::INFINITY;
        for k in 1..50 {
            let v = nu_root(0.6, 0.1 * k as f64).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn zero_drift_pde_is_one() {
        let g = solve_value_pde(&Coefficient::Constant(0.0), 0.5, 1.0, &params(41, 21)).unwrap();
        assert!(g.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rho_zero_pde_matches_closed_form() {
        let g = solve_value_pde(&Coefficient::Constant(1.0), 0.0, 1.0, &params(41, 200)).unwrap();
        for k in 0..g.nt {
            let exact = 1.0 / (2.0 - g.time(k));
            assert!(g.row(k).iter().all(|v| (v - exact).abs() < 1e-5));
        }
        assert!((g.interpolate(0.0, 0.3).unwrap() - 0.5).abs() < 1e-5);
    }

    #[test]
    fn pde_matches_ode_for_deterministic_theta() {
        let rho = 0.5f64.sqrt();
        let th = Coefficient::curve(|t| 1.0 + 0.5 * t);
        let g = solve_value_pde(&th, rho, 1.0, &params(21, 800)).unwrap();
        let gap = ode_gap(&g, &th, rho).unwrap();
        let worst = gap.iter().map(|p| p.1).fold(0.0, f64::max);
        assert!(worst < 1e-6, "gap {worst}");
        assert!(g.max_spread() < 1e-13);
    }

    #[test]
    fn ode_examples() {
        let one = Coefficient::Constant(1.0);
        let times = [0.0, 0.25, 0.5, 1.0];
        let u = ode_u(&one, 0.0, &times, 1.0).unwrap();
        for (t, v) in times.iter().zip(&u) {
            assert!((v - 1.0 / (2.0 - t)).abs() < 1e-12);
        }
        let z = ode_u(&Coefficient::Constant(0.0), 0.8, &times, 1.0).unwrap();
        assert!(z.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(ode_u(&Coefficient::field(|_, x| x), 0.0, &times, 1.0).is_err());
    }

    #[test]
    fn closed_form_examples() {
        let sig = Coefficient::Constant(1.0);
        let r = closed_form_rho0(&Coefficient::Constant(1.0), &sig, 1.0, &[0.0], 1.0).unwrap();
        assert!((r.y0 - 0.5).abs() < 1e-12);
        assert!((r.pi[0] - 0.5).abs() < 1e-12);
        let r = closed_form_rho0(&Coefficient::Constant(0.0), &sig, 2.0, &[0.0], 1.0).unwrap();
        assert_eq!(r.y0, 2.0);
        let r = closed_form_rho0(&Coefficient::curve(|t| t), &sig, 3.0, &[0.5], 1.0).unwrap();
        assert!((r.y0 - 2.25).abs() < 1e-12);
        assert!(r.phi.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn markov_representation_examples() {
        let sig = Coefficient::Constant(1.0);
        let g0 = solve_value_pde(&Coefficient::Constant(0.0), 0.5, 1.0, &params(41, 11)).unwrap();
        let path = [0.0, 0.3, -0.1, 0.4, 0.2];
        let m =
            markov_representation(&g0, &path, &Coefficient::Constant(0.0), &sig, 0.5, 2.0).unwrap();
        assert!(m.y_tilde.iter().all(|&y| y == 2.0));
        assert!(m.pi_star.iter().all(|&p| p == 0.0));

        let g1 = solve_value_pde(&Coefficient::Constant(1.0), 0.0, 1.0, &params(41, 401)).unwrap();
        let m =
            markov_representation(&g1, &path, &Coefficient::Constant(1.0), &sig, 0.0, 1.0).unwrap();
        assert!((m.y_tilde[0] - 0.5).abs() < 1e-5);
        assert!((m.pi_star[0] - 0.5).abs() < 1e-5);

        let far = [0.0, 100.0];
        assert!(matches!(
            markov_representation(&g1, &far, &Coefficient::Constant(1.0), &sig, 0.0, 1.0),
            Err(MvhError::Extrapolation { .. })
        ));
    }

    #[test]
    fn dump_round_trip() {
        let g = solve_value_pde(&Coefficient::Constant(1.0), 0.3, 1.0, &params(11, 5)).unwrap();
        let mut buf = Vec::new();
        g.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1 + 5);
        assert!(text.starts_with("nx=11,nt=5,x_min=-6,x_max=6"));
        let back = PdeGrid::read_dump(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.values(), g.values());
    }

    #[test]
    fn feynman_kac_zero_drift() {
        let g = solve_value_pde(&Coefficient::Constant(0.0), 0.5, 1.0, &params(41, 11)).unwrap();
        let fk =
            feynman_kac_check(&g, &Coefficient::Constant(0.0), 0.5, 0.0, 0.0, 10, 100, 1).unwrap();
        assert_eq!(fk.estimate, 1.0);
        assert_eq!(fk.std_error, 0.0);
    }
}
