use thiserror::Error;

pub type Result<T> = std::result::Result<T, MvhError>;

#[derive(Debug, Error)]
pub enum MvhError {
    /// A lattice or batch would exceed its memory bound.
    #[error("resource limit: {what} (requested {requested}, cap {cap})")]
    Resource {
        what: String,
        requested: u64,
        cap: u64,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Payoffs outside the supported classes need a stochastic derivative
    /// of the claim, which is not computed here.
    #[error("unsupported capability: {0}")]
    Capability(String),

    #[error("condition E violated: rho^2 = {rho_sq} but rho_t^2 < 1 for all t is required")]
    ConditionE { rho_sq: f64 },

    #[error("{solver} did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("Newton failed at {location}: residual {residual:.3e} after {iterations} iterations")]
    Newton {
        location: String,
        residual: f64,
        iterations: usize,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("point (t={t}, x={x}) lies outside the grid [{x_min}, {x_max}]")]
    Extrapolation {
        t: f64,
        x: f64,
        x_min: f64,
        x_max: f64,
    },

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl MvhError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        MvhError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
