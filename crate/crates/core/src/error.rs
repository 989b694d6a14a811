use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("orthogonalization breakdown at basis index {index}: norm {norm:.3e}")]
    Conditioning { index: usize, norm: f64 },

    #[error("degenerate spectrum: no propagating Fourier mode for k = {k}")]
    DegenerateSpectrum { k: f64 },

    #[error("total field magnitude {value:.3e} below threshold {threshold:.3e} at node ({p},{q}) for source alpha = {alpha}")]
    NearZeroTotalField {
        p: usize,
        q: usize,
        alpha: f64,
        value: f64,
        threshold: f64,
    },

    #[error("degenerate smoothing: smoothed field vanished while input did not")]
    DegenerateSmoothing,

    #[error("minimization did not converge within {iterations} iterations (final J = {final_j:.6e})")]
    NonConvergence {
        iterations: usize,
        final_j: f64,
        /// Accepted iterates as (iteration, gamma, J).
        trace: Vec<(usize, f64, f64)>,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
