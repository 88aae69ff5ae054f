use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error(
        "spectral coefficients violate Hermitian symmetry \
         (max deviation {max_deviation:.3e}, tolerance {tolerance:.3e})"
    )]
    SpectralSymmetry { max_deviation: f64, tolerance: f64 },

    #[error("vertical integration bound {upper} lies outside [{lower}, 0]")]
    VerticalBound { upper: f64, lower: f64 },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error(
        "time step dt = {dt} violates the CFL guard: \
         dt must be <= {dt_max:.6e} (cfl_max = {cfl_max}, max speed = {max_speed:.6e})"
    )]
    CflViolation {
        dt: f64,
        dt_max: f64,
        cfl_max: f64,
        max_speed: f64,
    },

    #[error("states are at different times: {t_a} vs {t_b}")]
    TimeMismatch { t_a: f64, t_b: f64 },

    #[error(
        "depth-averaged divergence residual {residual:.3e} exceeds \
         the constraint limit {limit:.3e}"
    )]
    ConstraintViolation { residual: f64, limit: f64 },

    #[error(
        "cell size {h} does not divide the period {period} within 1% \
         (nearest cell count {nearest})"
    )]
    CellSizeMismatch { h: f64, period: f64, nearest: usize },

    #[error("non-finite field values encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("decay-fit window [{t_a}, {t_b}] contains non-positive values")]
    NonPositiveSeries { t_a: f64, t_b: f64 },

    #[error(
        "scaling fit requires max(delta)/min(delta) >= 2, got spread {spread:.3}"
    )]
    DegenerateSpread { spread: f64 },

    #[error("empty probe suite")]
    EmptyProbeSuite,

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
