//! Binary path tree for the observed Brownian motion `w`.
//!
//! Every node of the tree is a full path prefix (the tree does not
//! recombine), so any functional of the observed path is representable.
//! At step `t` there are `2^t` atoms of probability `2^-t`; node `i` at
//! step `t` has children `2i` (up move, `+sqrt(dt)`) and `2i + 1` (down
//! move, `-sqrt(dt)`). With equal branch weights the discrete `w` is an
//! exact martingale with `<w>_t = t`.
//!
//! Processes adapted to the observation filtration live in
//! [`AdaptedField`]. A field with `n + 1` levels is adapted (one value per
//! node at steps `0..=n`); a field with `n` levels is predictable, its
//! level-`t` value acting on the increment from step `t` to `t + 1`.

use std::str::FromStr;

use crate::error::{MvhError, Result};

/// Default cap on lattice depth; `2^20` terminal atoms take 8 MiB per field
/// level and about 16 MiB per full adapted field.
pub const DEFAULT_MAX_STEPS: usize = 20;

/// Absolute tolerance for conditional expectation identities on the lattice.
pub const LATTICE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    horizon: f64,
    dt: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps == 0 {
            return Err(MvhError::Domain("time grid needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(MvhError::Domain(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(TimeGrid {
            n_steps,
            horizon,
            dt: horizon / n_steps as f64,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Calendar time of step `k`.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObservationLattice {
    grid: TimeGrid,
    sqrt_dt: f64,
    w: Vec<Vec<f64>>,
}

/// Builds the lattice with the default depth cap.
pub fn build_lattice(grid: TimeGrid) -> Result<ObservationLattice> {
    build_lattice_with_cap(grid, DEFAULT_MAX_STEPS)
}

pub fn build_lattice_with_cap(grid: TimeGrid, max_steps: usize) -> Result<ObservationLattice> {
    let n = grid.n_steps();
    if n > max_steps || n >= 63 {
        return Err(MvhError::Resource {
            what: format!(
                "observation lattice with {n} steps holds 2^{n} path atoms \
                 (about 2^{} bytes per adapted field)",
                n + 4
            ),
            requested: n as u64,
            cap: max_steps as u64,
        });
    }
    let sqrt_dt = grid.dt().sqrt();
    let mut w = Vec::with_capacity(n + 1);
    w.push(vec![0.0]);
    for t in 0..n {
        let parent = &w[t];
        let mut next = Vec::with_capacity(parent.len() * 2);
        for &x in parent {
            next.push(x + sqrt_dt);
            next.push(x - sqrt_dt);
        }
        w.push(next);
    }
    Ok(ObservationLattice { grid, sqrt_dt, w })
}

impl ObservationLattice {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, t: usize) -> f64 {
        self.grid.time(t)
    }

    pub fn n_nodes(&self, t: usize) -> usize {
        1usize << t
    }

    pub fn n_terminal(&self) -> usize {
        self.n_nodes(self.n_steps())
    }

    /// Probability of a single atom at step `t`.
    pub fn atom_probability(&self, t: usize) -> f64 {
        (0.5f64).powi(t as i32)
    }

    pub fn w(&self, t: usize, node: usize) -> f64 {
        self.w[t][node]
    }

    pub fn w_level(&self, t: usize) -> &[f64] {
        &self.w[t]
    }

    /// Increment of `w` leading into `child` at step `t + 1`.
    #[inline]
    pub fn dw_into(&self, child: usize) -> f64 {
        if child & 1 == 0 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// Path of node values from the root to `node` at step `t`.
    pub fn path_to(&self, t: usize, node: usize) -> Vec<f64> {
        (0..=t).map(|s| self.w[s][node >> (t - s)]).collect()
    }

    /// Mean of a level under the atom probabilities.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() / values.len() as f64
    }

    /// `sqrt(E[x^2])` over the terminal atoms.
    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
    }

    fn check_terminal(&self, values: &[f64], context: &'static str) -> Result<()> {
        if values.len() != self.n_terminal() {
            return Err(MvhError::Shape {
                context,
                expected: self.n_terminal(),
                got: values.len(),
            });
        }
        Ok(())
    }
}

/// Values indexed by (step, node).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField {
    levels: Vec<Vec<f64>>,
}

impl AdaptedField {
    /// Adapted field with levels `0..=n`.
    pub fn zeros(lattice: &ObservationLattice) -> Self {
        Self::zeros_with_levels(lattice.n_steps() + 1)
    }

    /// Predictable field with levels `0..n`.
    pub fn predictable_zeros(lattice: &ObservationLattice) -> Self {
        Self::zeros_with_levels(lattice.n_steps())
    }

    fn zeros_with_levels(n_levels: usize) -> Self {
        AdaptedField {
            levels: (0..n_levels).map(|t| vec![0.0; 1usize << t]).collect(),
        }
    }

    pub fn from_fn(lattice: &ObservationLattice, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_fn_levels(lattice.n_steps() + 1, f)
    }

    pub fn predictable_from_fn(
        lattice: &ObservationLattice,
        f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        Self::from_fn_levels(lattice.n_steps(), f)
    }

    fn from_fn_levels(n_levels: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let levels = (0..n_levels)
            .map(|t| (0..1usize << t).map(|i| f(t, i)).collect())
            .collect();
        AdaptedField { levels }
    }

    /// Builds a field from explicit per-level arrays, checking the `2^t` sizes.
    pub fn from_levels(levels: Vec<Vec<f64>>) -> Result<Self> {
        for (t, level) in levels.iter().enumerate() {
            if level.len() != 1usize << t {
                return Err(MvhError::Shape {
                    context: "AdaptedField::from_levels",
                    expected: 1usize << t,
                    got: level.len(),
                });
            }
        }
        Ok(AdaptedField { levels })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, t: usize) -> &[f64] {
        &self.levels[t]
    }

    pub fn level_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.levels[t]
    }

    pub fn get(&self, t: usize, node: usize) -> f64 {
        self.levels[t][node]
    }

    pub fn set(&mut self, t: usize, node: usize, value: f64) {
        self.levels[t][node] = value;
    }

    pub fn terminal(&self) -> &[f64] {
        self.levels.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn levels(&self) -> impl Iterator<Item = &[f64]> {
        self.levels.iter().map(Vec::as_slice)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.levels.iter().flatten().copied()
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values().fold(f64::INFINITY, f64::min)
    }

    /// Largest nodewise gap over the levels both fields share.
    pub fn max_abs_diff(&self, other: &AdaptedField) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> AdaptedField {
        AdaptedField {
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    pub fn zip_map(&self, other: &AdaptedField, f: impl Fn(f64, f64) -> f64) -> AdaptedField {
        AdaptedField {
            levels: self
                .levels
                .iter()
                .zip(&other.levels)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        }
    }

    /// Restriction to levels `0..n`, i.e. the predictable version.
    pub fn to_predictable(&self) -> AdaptedField {
        let n = self.levels.len().saturating_sub(1);
        AdaptedField {
            levels: self.levels[..n].to_vec(),
        }
    }
}

/// Discrete Galtchouk–Kunita–Watanabe decomposition against `w`.
#[derive(Debug, Clone)]
pub struct GkwParts {
    pub initial_value: f64,
    /// Predictable integrand against `dw`.
    pub integrand: AdaptedField,
    /// Largest |E[R dw | node]| of the residual increment `R`.
    pub residual_defect: f64,
    /// The martingale `E[terminal | G_t]` induced by the terminal values.
    pub martingale: AdaptedField,
}

/// Projects values at step `step + 1` onto step `step`.
pub fn conditional_expectation(
    child_values: &[f64],
    lattice: &ObservationLattice,
    step: usize,
) -> Result<Vec<f64>> {
    let expected = 2usize << step;
    if step >= lattice.n_steps() || child_values.len() != expected {
        return Err(MvhError::Shape {
            context: "conditional_expectation",
            expected,
            got: child_values.len(),
        });
    }
    Ok(project(child_values))
}

#[inline]
pub(crate) fn project(child_values: &[f64]) -> Vec<f64> {
    child_values
        .chunks_exact(2)
        .map(|c| 0.5 * (c[0] + c[1]))
        .collect()
}

/// Backward induction of `E[terminal | G_t]` for every step.
pub fn martingale_from_terminal(
    terminal: &[f64],
    lattice: &ObservationLattice,
) -> Result<AdaptedField> {
    lattice.check_terminal(terminal, "martingale_from_terminal")?;
    let n = lattice.n_steps();
    let mut levels = vec![Vec::new(); n + 1];
    levels[n] = terminal.to_vec();
    for t in (0..n).rev() {
        levels[t] = project(&levels[t + 1]);
    }
    Ok(AdaptedField { levels })
}

/// GKW integrand of a martingale field: `E[dY dw | node] / dt`.
pub(crate) fn integrand_of(
    martingale: &AdaptedField,
    lattice: &ObservationLattice,
) -> AdaptedField {
    let n = lattice.n_steps();
    let scale = 0.5 / lattice.sqrt_dt();
    let levels = (0..n)
        .map(|t| {
            martingale
                .level(t + 1)
                .chunks_exact(2)
                .map(|c| (c[0] - c[1]) * scale)
                .collect()
        })
        .collect();
    AdaptedField { levels }
}

pub fn discrete_gkw(terminal: &[f64], lattice: &ObservationLattice) -> Result<GkwParts> {
    let martingale = martingale_from_terminal(terminal, lattice)?;
    let integrand = integrand_of(&martingale, lattice);
    let h = lattice.sqrt_dt();
    let mut defect = 0.0f64;
    for t in 0..lattice.n_steps() {
        let parents = martingale.level(t);
        let children = martingale.level(t + 1);
        let z = integrand.level(t);
        for (i, &y) in parents.iter().enumerate() {
            let r_up = children[2 * i] - y - z[i] * h;
            let r_down = children[2 * i + 1] - y + z[i] * h;
            let cov = 0.5 * (r_up * h - r_down * h);
            defect = defect.max(cov.abs());
        }
    }
    Ok(GkwParts {
        initial_value: martingale.get(0, 0),
        integrand,
        residual_defect: defect,
        martingale,
    })
}

/// Rebuilds `Y_0 + sum z dw` pathwise from GKW parts.
pub fn gkw_reconstruction(parts: &GkwParts, lattice: &ObservationLattice) -> Result<AdaptedField> {
    let mut field = stochastic_integral(&parts.integrand, &Driver::Dw, lattice)?;
    for t in 0..field.n_levels() {
        for v in field.level_mut(t) {
            *v += parts.initial_value;
        }
    }
    Ok(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverKind {
    Dw,
    Dt,
    Shat,
}

impl FromStr for DriverKind {
    type Err = MvhError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dw" => Ok(DriverKind::Dw),
            "dt" => Ok(DriverKind::Dt),
            "dshat" | "ds_hat" | "shat" => Ok(DriverKind::Shat),
            other => Err(MvhError::Domain(format!("unknown driver kind `{other}`"))),
        }
    }
}

/// Integrator of a discrete stochastic integral.
#[derive(Debug, Clone, Copy)]
pub enum Driver<'a> {
    Dw,
    Dt,
    /// Projected price increment `sigma (theta dt + rho dw)`, with the
    /// coefficients given as predictable fields.
    Shat {
        theta: &'a AdaptedField,
        sigma: &'a AdaptedField,
        rho: f64,
    },
}

impl Driver<'_> {
    pub fn kind(&self) -> DriverKind {
        match self {
            Driver::Dw => DriverKind::Dw,
            Driver::Dt => DriverKind::Dt,
            Driver::Shat { .. } => DriverKind::Shat,
        }
    }

    /// Increment from node `parent` at step `t` into `child` at step `t + 1`.
    #[inline]
    pub fn increment(
        &self,
        lattice: &ObservationLattice,
        t: usize,
        parent: usize,
        child: usize,
    ) -> f64 {
        match self {
            Driver::Dw => lattice.dw_into(child),
            Driver::Dt => lattice.dt(),
            Driver::Shat { theta, sigma, rho } => {
                sigma.get(t, parent)
                    * (theta.get(t, parent) * lattice.dt() + rho * lattice.dw_into(child))
            }
        }
    }
}

/// Running sums `sum_{s<t} integrand_s * increment_s` along every path.
pub fn stochastic_integral(
    integrand: &AdaptedField,
    driver: &Driver<'_>,
    lattice: &ObservationLattice,
) -> Result<AdaptedField> {
    let n = lattice.n_steps();
    if integrand.n_levels() != n {
        return Err(MvhError::Shape {
            context: "stochastic_integral (predictable integrand levels)",
            expected: n,
            got: integrand.n_levels(),
        });
    }
    if let Driver::Shat { theta, sigma, .. } = driver {
        for f in [theta, sigma] {
            if f.n_levels() < n {
                return Err(MvhError::Shape {
                    context: "stochastic_integral (coefficient levels)",
                    expected: n,
                    got: f.n_levels(),
                });
            }
        }
    }
    let mut out = AdaptedField::zeros(lattice);
    for t in 0..n {
        let (head, tail) = out.levels.split_at_mut(t + 1);
        let prev = &head[t];
        let next = &mut tail[0];
        let pi = integrand.level(t);
        for (i, &acc) in prev.iter().enumerate() {
            for child in [2 * i, 2 * i + 1] {
                next[child] = acc + pi[i] * driver.increment(lattice, t, i, child);
            }
        }
    }
    Ok(out)
}

/// Largest |node value - mean of children| over the field.
pub fn martingale_defect(field: &AdaptedField, _lattice: &ObservationLattice) -> f64 {
    let mut defect = 0.0f64;
    for t in 0..field.n_levels().saturating_sub(1) {
        let parents = field.level(t);
        for (i, pair) in field.level(t + 1).chunks_exact(2).enumerate() {
            defect = defect.max((parents[i] - 0.5 * (pair[0] + pair[1])).abs());
        }
    }
    defect
}
