use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("dimensional mismatch for `{key}`: {message}")]
    Units { key: String, message: String },

    #[error("degenerate mobility: total mobility is zero")]
    DegenerateMobility,

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("singular matrix: zero pivot at row {row} (field {field}, node {node})")]
    SingularMatrix {
        row: usize,
        node: usize,
        field: usize,
    },

    #[error("newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("negative {field} = {value:.3e} at node {node}")]
    NegativeConcentration {
        field: &'static str,
        node: usize,
        value: f64,
    },

    #[error(
        "outer coupling loop not converged after {iterations} iterations (change {change:.3e})"
    )]
    OuterNotConverged { iterations: usize, change: f64 },

    #[error("solver failure at t = {t:.6e} s: {message}")]
    SolverFailure { t: f64, message: String },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether retrying the step with a smaller time step may succeed.
    pub fn is_step_failure(&self) -> bool {
        matches!(
            self,
            Error::NewtonDiverged { .. }
                | Error::NegativeConcentration { .. }
                | Error::OuterNotConverged { .. }
                | Error::SingularMatrix { .. }
                | Error::DegenerateMobility
        )
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
