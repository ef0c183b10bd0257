use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("no convergence: {0}")]
    NoConvergence(String),

    #[error("Hamiltonian is not convex in u at x = {x:?}, lambda+ = {lambda_plus:?}")]
    NonConvex { x: Vec<f64>, lambda_plus: Vec<f64> },

    #[error("point {point:?} lies outside the domain of radius {radius}")]
    OutOfDomain { point: Vec<f64>, radius: f64 },

    #[error("degenerate pencil: L and M share a kernel")]
    DegeneratePencil,

    #[error("spectrum is not hyperbolic: {0}")]
    NotHyperbolic(String),

    #[error("state trajectory from {x0:?} does not decay (ratio {ratio})")]
    NonDecay { x0: Vec<f64>, ratio: f64 },

    #[error("problem is outside the local regime: {0}")]
    OutsideLocalRegime(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by a numerical stage.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Dimension(_) | Error::InvalidProblem(_) | Error::Config(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
