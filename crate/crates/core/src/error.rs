use thiserror::Error;

/// Errors raised by the suspension pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("particles overlap: minimum distance {d_min} is not larger than 2R = {two_r}")]
    Overlap { d_min: f64, two_r: f64 },

    #[error("configuration does not fit the domain: {0}")]
    Domain(String),

    #[error("random sequential adsorption saturated after {attempts} attempts ({placed} of {target} placed)")]
    Saturation { attempts: u64, placed: usize, target: usize },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("kernel evaluated at a singular point (|x| = {0:e})")]
    SingularPoint(f64),

    #[error("invalid strain: {0}")]
    Strain(String),

    #[error("tree summation error {observed:e} exceeds {limit:e}")]
    Accuracy { observed: f64, limit: f64 },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("reflection residual grew from {before:e} to {after:e}")]
    Contractivity { before: f64, after: f64 },

    #[error("method of reflections did not converge in {iterations} iterations (last ratio {ratio})")]
    NonConvergence { iterations: usize, ratio: f64 },

    #[error("fixed point is not contracting (ratios {ratios:?})")]
    NonContractive { ratios: Vec<f64> },

    #[error("no sample points survive the region mask")]
    EmptyRegion,

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
