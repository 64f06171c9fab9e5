//! Run configuration: sectioned `key = value` text.
//!
//! ```ini
//! [model]
//! theta = 1 + 0.5 * tanh(x)   ; number or expression in t and x
//! sigma = 1
//! rho = 0.5
//! T = 1
//! payoff = constant           ; constant | observable | hidden
//! payoff_value = 1            ; the constant claim
//! payoff_expr = x             ; g(x) for observable / hidden claims
//! x = 0                       ; initial capital
//!
//! [solver]
//! lattice_n = 10
//! pde_nx = 401
//! pde_nt = 400
//! pde_half_width = 6          ; in units of sqrt(T)
//! tol = 1e-10
//! newton_tol = 1e-12
//! max_iter = 1000             ; default 10 * lattice size
//! method = normal_equations   ; normal_equations | cg
//! h_tilde_sign = section3     ; section3 | section1
//!
//! [mc]
//! n_paths = 20000
//! n_steps = 128
//! seed = 42
//! strategy = optimal          ; optimal | constant
//! strategy_value = 0
//!
//! [output]
//! directory = out
//! formats = csv, json
//! ```
//!
//! Every key is optional; unknown sections and keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ini::{Ini, ParseOption};

use super::expr::{self, Expr};
use crate::error::{MvhError, Result};
use crate::lattice::DEFAULT_MAX_STEPS;
use crate::model::{Coefficient, DiffusionSpec, HTildeSign, PayoffFn, PayoffSpec};
use crate::operator::{KrylovMethod, SolverOptions, DEFAULT_SOLVER_TOL};
use crate::pde::{PdeParams, DEFAULT_HALF_WIDTH, DEFAULT_NT, DEFAULT_NX};

/// A coefficient given as text, kept for reporting.
#[derive(Debug, Clone)]
pub struct CoefficientConfig {
    pub source: String,
    pub expr: Arc<Expr>,
}

impl CoefficientConfig {
    fn parse(path: &str, source: &str) -> Result<Self> {
        let e =
            expr::parse(source).map_err(|e| MvhError::config(path, format!("`{source}`: {e}")))?;
        Ok(CoefficientConfig {
            source: source.to_string(),
            expr: Arc::new(e),
        })
    }

    fn constant(v: f64) -> Self {
        CoefficientConfig {
            source: v.to_string(),
            expr: Arc::new(Expr::Num(v)),
        }
    }

    /// Constant, curve in `t`, or field in `(t, x)` depending on the variables used.
    pub fn coefficient(&self) -> Coefficient {
        let e = self.expr.clone();
        if e.uses_x() {
            Coefficient::field(move |t, x| e.eval(t, x))
        } else if e.uses_t() {
            Coefficient::curve(move |t| e.eval(t, 0.0))
        } else {
            Coefficient::Constant(e.eval(0.0, 0.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayoffKind {
    Constant,
    Observable,
    Hidden,
}

impl FromStr for PayoffKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "constant" => Ok(PayoffKind::Constant),
            "observable" => Ok(PayoffKind::Observable),
            "hidden" => Ok(PayoffKind::Hidden),
            _ => Err(format!(
                "expected constant, observable or hidden, got `{s}`"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub theta: CoefficientConfig,
    pub sigma: CoefficientConfig,
    pub rho: f64,
    pub horizon: f64,
    pub payoff: PayoffKind,
    pub payoff_value: f64,
    pub payoff_expr: CoefficientConfig,
    pub initial_capital: f64,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub lattice_n: usize,
    pub pde_nx: usize,
    pub pde_nt: usize,
    pub pde_half_width: f64,
    pub tol: f64,
    pub newton_tol: f64,
    pub max_iter: Option<usize>,
    pub method: KrylovMethod,
    pub h_tilde_sign: HTildeSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyChoice {
    Optimal,
    Constant,
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub strategy: StrategyChoice,
    pub strategy_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl OutputConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub solver: SolverConfig,
    pub mc: McConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig {
                theta: CoefficientConfig::constant(1.0),
                sigma: CoefficientConfig::constant(1.0),
                rho: 0.5,
                horizon: 1.0,
                payoff: PayoffKind::Constant,
                payoff_value: 1.0,
                payoff_expr: CoefficientConfig::parse("payoff_expr", "x")
                    .expect("static expression"),
                initial_capital: 0.0,
            },
            solver: SolverConfig {
                lattice_n: 10,
                pde_nx: DEFAULT_NX,
                pde_nt: DEFAULT_NT,
                pde_half_width: DEFAULT_HALF_WIDTH,
                tol: DEFAULT_SOLVER_TOL,
                newton_tol: 1e-12,
                max_iter: None,
                method: KrylovMethod::NormalEquations,
                h_tilde_sign: HTildeSign::Standard,
            },
            mc: McConfig {
                n_paths: 20_000,
                n_steps: 128,
                seed: 42,
                strategy: StrategyChoice::Optimal,
                strategy_value: 0.0,
            },
            output: OutputConfig {
                directory: PathBuf::from("out"),
                formats: vec![Format::Csv, Format::Json],
            },
        }
    }
}

const MODEL_KEYS: &[&str] = &[
    "theta",
    "sigma",
    "rho",
    "t",
    "payoff",
    "payoff_value",
    "payoff_expr",
    "x",
];
const SOLVER_KEYS: &[&str] = &[
    "lattice_n",
    "pde_nx",
    "pde_nt",
    "pde_half_width",
    "tol",
    "newton_tol",
    "max_iter",
    "method",
    "h_tilde_sign",
];
const MC_KEYS: &[&str] = &["n_paths", "n_steps", "seed", "strategy", "strategy_value"];
const OUTPUT_KEYS: &[&str] = &["directory", "formats"];

struct Section<'a> {
    name: &'static str,
    props: Option<&'a ini::Properties>,
}

impl Section<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        let props = self.props?;
        props
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v.trim())
    }

    fn path(&self, key: &str) -> String {
        format!("{}.{}", self.name, key)
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|e| MvhError::config(self.path(key), format!("cannot parse `{v}`: {e}"))),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            MvhError::config(
                path.display().to_string(),
                format!("cannot read config: {e}"),
            )
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let opt = ParseOption {
            enabled_escape: false,
            ..ParseOption::default()
        };
        let ini = Ini::load_from_str_opt(text, opt)
            .map_err(|e| MvhError::config(format!("line {}", e.line), e.msg.to_string()))?;
        for (name, props) in ini.iter() {
            let allowed: &[&str] = match name.map(|s| s.to_ascii_lowercase()).as_deref() {
                None if props.is_empty() => continue,
                Some("model") => MODEL_KEYS,
                Some("solver") => SOLVER_KEYS,
                Some("mc") => MC_KEYS,
                Some("output") => OUTPUT_KEYS,
                None => {
                    return Err(MvhError::config(
                        "<top>",
                        "keys must appear inside a section",
                    ))
                }
                Some(other) => return Err(MvhError::config(other, "unknown section")),
            };
            for (k, _) in props.iter() {
                if !allowed.contains(&k.to_ascii_lowercase().as_str()) {
                    return Err(MvhError::config(
                        format!("{}.{}", name.unwrap_or_default(), k),
                        format!("unknown key (allowed: {})", allowed.join(", ")),
                    ));
                }
            }
        }
        let sec = |name: &'static str| Section {
            name,
            props: ini
                .iter()
                .find(|(n, _)| n.is_some_and(|n| n.eq_ignore_ascii_case(name)))
                .map(|(_, p)| p),
        };
        let d = RunConfig::default();

        let m = sec("model");
        let coef = |key: &str, default: &CoefficientConfig| -> Result<CoefficientConfig> {
            match m.raw(key) {
                None => Ok(default.clone()),
                Some(src) => CoefficientConfig::parse(&m.path(key), src),
            }
        };
        let model = ModelConfig {
            theta: coef("theta", &d.model.theta)?,
            sigma: coef("sigma", &d.model.sigma)?,
            rho: m.get("rho", d.model.rho)?,
            horizon: m.get("T", d.model.horizon)?,
            payoff: m.get("payoff", d.model.payoff)?,
            payoff_value: m.get("payoff_value", d.model.payoff_value)?,
            payoff_expr: coef("payoff_expr", &d.model.payoff_expr)?,
            initial_capital: m.get("x", d.model.initial_capital)?,
        };

        let s = sec("solver");
        let method = match s.raw("method") {
            None => d.solver.method,
            Some("normal_equations") | Some("cgnr") => KrylovMethod::NormalEquations,
            Some("cg") => KrylovMethod::ConjugateGradient,
            Some(v) => {
                return Err(MvhError::config(
                    s.path("method"),
                    format!("expected normal_equations or cg, got `{v}`"),
                ))
            }
        };
        let h_tilde_sign = match s.raw("h_tilde_sign") {
            None => d.solver.h_tilde_sign,
            Some(v) => v
                .parse::<HTildeSign>()
                .map_err(|e| MvhError::config(s.path("h_tilde_sign"), e.to_string()))?,
        };
        let solver = SolverConfig {
            lattice_n: s.get("lattice_n", d.solver.lattice_n)?,
            pde_nx: s.get("pde_nx", d.solver.pde_nx)?,
            pde_nt: s.get("pde_nt", d.solver.pde_nt)?,
            pde_half_width: s.get("pde_half_width", d.solver.pde_half_width)?,
            tol: s.get("tol", d.solver.tol)?,
            newton_tol: s.get("newton_tol", d.solver.newton_tol)?,
            max_iter: match s.raw("max_iter") {
                None => None,
                Some(_) => Some(s.get("max_iter", 0usize)?),
            },
            method,
            h_tilde_sign,
        };

        let c = sec("mc");
        let strategy = match c.raw("strategy") {
            None => d.mc.strategy,
            Some("optimal") => StrategyChoice::Optimal,
            Some("constant") => StrategyChoice::Constant,
            Some(v) => {
                return Err(MvhError::config(
                    c.path("strategy"),
                    format!("expected optimal or constant, got `{v}`"),
                ))
            }
        };
        let mc = McConfig {
            n_paths: c.get("n_paths", d.mc.n_paths)?,
            n_steps: c.get("n_steps", d.mc.n_steps)?,
            seed: c.get("seed", d.mc.seed)?,
            strategy,
            strategy_value: c.get("strategy_value", d.mc.strategy_value)?,
        };

        let o = sec("output");
        let formats = match o.raw("formats") {
            None => d.output.formats.clone(),
            Some(v) => v
                .split(',')
                .map(|f| match f.trim() {
                    "csv" => Ok(Format::Csv),
                    "json" => Ok(Format::Json),
                    other => Err(MvhError::config(
                        o.path("formats"),
                        format!("unknown format `{other}` (csv, json)"),
                    )),
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let output = OutputConfig {
            directory: o.raw("directory").map_or(d.output.directory, PathBuf::from),
            formats,
        };

        let cfg = RunConfig {
            model,
            solver,
            mc,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let bad = |path: &str, msg: String| Err(MvhError::config(path, msg));
        if !(m.rho * m.rho < 1.0) {
            return bad(
                "model.rho",
                format!(
                    "condition E requires rho_t^2 < 1 for all t, got rho = {}",
                    m.rho
                ),
            );
        }
        if !(m.horizon > 0.0 && m.horizon.is_finite()) {
            return bad("model.T", format!("must be positive, got {}", m.horizon));
        }
        for (path, v) in [
            ("model.x", m.initial_capital),
            ("model.payoff_value", m.payoff_value),
        ] {
            if !v.is_finite() {
                return bad(path, format!("must be finite, got {v}"));
            }
        }
        if !m.sigma.expr.uses_t() && !m.sigma.expr.uses_x() {
            let s = m.sigma.expr.eval(0.0, 0.0);
            if !(s > 0.0 && s.is_finite()) {
                return bad("model.sigma", format!("must be positive, got {s}"));
            }
        }
        let s = &self.solver;
        if s.lattice_n == 0 || s.lattice_n > DEFAULT_MAX_STEPS {
            return bad(
                "solver.lattice_n",
                format!("must be in 1..={DEFAULT_MAX_STEPS}, got {}", s.lattice_n),
            );
        }
        if s.pde_nx < 3 {
            return bad(
                "solver.pde_nx",
                format!("must be at least 3, got {}", s.pde_nx),
            );
        }
        if s.pde_nt < 2 {
            return bad(
                "solver.pde_nt",
                format!("must be at least 2, got {}", s.pde_nt),
            );
        }
        for (path, v) in [
            ("solver.tol", s.tol),
            ("solver.newton_tol", s.newton_tol),
            ("solver.pde_half_width", s.pde_half_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(path, format!("must be positive, got {v}"));
            }
        }
        if s.max_iter == Some(0) {
            return bad("solver.max_iter", "must be positive".into());
        }
        let c = &self.mc;
        if c.n_paths < 2 {
            return bad(
                "mc.n_paths",
                format!("must be at least 2, got {}", c.n_paths),
            );
        }
        if c.n_steps == 0 {
            return bad("mc.n_steps", "must be positive".into());
        }
        if self.output.formats.is_empty() {
            return bad("output.formats", "at least one format is required".into());
        }
        Ok(())
    }

    pub fn payoff(&self) -> PayoffSpec {
        let m = &self.model;
        let g = || {
            let e = m.payoff_expr.expr.clone();
            PayoffFn::new(m.payoff_expr.source.clone(), move |x| e.eval(0.0, x))
        };
        match m.payoff {
            PayoffKind::Constant => PayoffSpec::Constant(m.payoff_value),
            PayoffKind::Observable => PayoffSpec::Observable(g()),
            PayoffKind::Hidden => PayoffSpec::Hidden(g()),
        }
    }

    pub fn spec(&self) -> DiffusionSpec {
        let m = &self.model;
        DiffusionSpec::new(m.theta.coefficient(), m.rho, m.horizon, self.payoff())
            .with_sigma(m.sigma.coefficient())
            .with_initial_capital(m.initial_capital)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            method: self.solver.method,
        }
    }

    pub fn pde_params(&self) -> PdeParams {
        let h = self.solver.pde_half_width * self.model.horizon.sqrt();
        PdeParams {
            nx: self.solver.pde_nx,
            nt: self.solver.pde_nt,
            x_min: -h,
            x_max: h,
            newton_tol: self.solver.newton_tol,
            max_newton: 50,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.solver.lattice_n, 10);
        assert_eq!(c.model.rho, 0.5);
        assert_eq!(c.solver.h_tilde_sign, HTildeSign::Standard);
    }

    #[test]
    fn full_config() {
        let text = "\
[model]
theta = 1 + 0.5 * t ; deterministic curve
rho = -0.3
T = 2
payoff = hidden
payoff_expr = max(x, 0)

[solver]
lattice_n = 6
h_tilde_sign = section1
method = cg

[mc]
seed = 7

[output]
formats = csv
";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.model.rho, -0.3);
        assert_eq!(c.model.horizon, 2.0);
        assert!(matches!(c.model.theta.coefficient(), Coefficient::Curve(_)));
        assert_eq!(c.model.theta.coefficient().eval(1.0, 5.0), 1.5);
        assert_eq!(c.payoff().evaluate(0.0, -1.0), 0.0);
        assert_eq!(c.payoff().evaluate(0.0, 2.0), 2.0);
        assert_eq!(c.solver.h_tilde_sign, HTildeSign::Flipped);
        assert_eq!(c.solver.method, KrylovMethod::ConjugateGradient);
        assert_eq!(c.mc.seed, 7);
        assert!(!c.output.wants(Format::Json));
    }

    fn err_path(text: &str) -> String {
        match RunConfig::parse(text) {
            Err(MvhError::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_field_paths() {
        assert_eq!(err_path("[model]\nrho = 1.0\n"), "model.rho");
        assert_eq!(err_path("[model]\nrho = abc\n"), "model.rho");
        assert_eq!(err_path("[model]\ntheta = 1 + y\n"), "model.theta");
        assert_eq!(err_path("[solver]\nlattice_n = 21\n"), "solver.lattice_n");
        assert_eq!(err_path("[solver]\ntol = 0\n"), "solver.tol");
        assert_eq!(
            err_path("[solver]\nh_tilde_sign = section2\n"),
            "solver.h_tilde_sign"
        );
        assert_eq!(err_path("[mc]\nn_paths = 1\n"), "mc.n_paths");
        assert_eq!(err_path("[model]\nsigma = -1\n"), "model.sigma");
        assert_eq!(err_path("[model]\nvol = 1\n"), "model.vol");
        assert_eq!(err_path("[extra]\na = 1\n"), "extra");
    }

    #[test]
    fn condition_e_message() {
        let e = RunConfig::parse("[model]\nrho = 1.0\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("rho_t^2 < 1 for all"), "{e}");
    }
}
