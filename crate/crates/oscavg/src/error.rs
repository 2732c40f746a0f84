//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// State left the ball of radius `r0` the model is defined on. Callers
    /// running simulations treat this as an exit event, not a failure.
    #[error("state norm {norm} exceeds the domain radius {radius}")]
    DomainExceeded { norm: f64, radius: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("chart construction failed at energy {energy}: {reason}")]
    ChartConstruction { energy: f64, reason: String },

    #[error("energy {energy} outside chart range (0, {cap}]")]
    ChartRange { energy: f64, cap: f64 },

    #[error("homological equation unsolvable: S-mean residual {residual} above {tolerance}")]
    Homological { residual: f64, tolerance: f64 },

    #[error("averaging order {0} not supported (engine ships orders k <= 2)")]
    UnsupportedOrder(u32),

    #[error("well index ell={0} not supported by the averaging engine; only ell=0 (constant frequency) is implemented")]
    UnsupportedWellIndex(u32),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("small-amplitude classification ambiguous: {0}")]
    ClassificationAmbiguous(String),

    #[error("outside theorem hypotheses: {0}")]
    OutOfTheory(String),

    #[error("missing constant for the Lyapunov monitor: {0}")]
    MissingConstant(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
