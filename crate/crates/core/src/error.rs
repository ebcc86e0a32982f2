use thiserror::Error;

/// Errors raised by the solver, sensitivity and optimization layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{solver} did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("Poisson right-hand side is not compatible: mean {mean:e}")]
    IncompatibleRhs { mean: f64 },

    #[error("velocity is not discretely divergence free: max |div u| = {max_div:e} (limit {limit:e})")]
    Divergence { max_div: f64, limit: f64 },

    #[error("phase field leaves [-1, 1]: max|phi| - 1 = {excess:e}")]
    BoundViolation { excess: f64 },

    #[error("CFL condition violated: |u|max dt / h = {courant:.3} > {limit:.3}")]
    Cfl { courant: f64, limit: f64 },

    #[error("material law does not provide {0}")]
    MissingLaw(&'static str),

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through step annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            e => e,
        }
    }
}
