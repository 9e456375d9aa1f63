//! Rolling-window AR/VAR forecasting of probing rates.
//!
//! Series are handed around as `&[Vec<f64>]`, one inner vector per port,
//! all of the same length. Every prediction is one step ahead: weights are
//! refit on the trailing window before each bucket is predicted.

mod grid;
mod lstsq;
mod metrics;
mod model;
mod rolling;
mod select;

pub use grid::{grid_search, grid_windows, validation_span, GridCell, GridConfig, GridResult};
pub use lstsq::{fit_least_squares, LstsqSolution};
pub use metrics::{pearson, persistence_r2, r_squared};
pub use model::{fit_scaling, make_design_matrix, FeatureScale, ForecastModel, ModelKind, Scaling};
pub use rolling::{rolling_forecast, DesignParams, EvalReport, Prediction, RollingOptions};
pub use select::{select_features, var_forecast_with_selection, FeatureSelection, SelectionConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("{rows} rows cannot determine {cols} weights")]
    Underdetermined { rows: usize, cols: usize },
    #[error("non-finite value in design matrix or response")]
    NonFinite,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no series given")]
    NoSeries,
    #[error("empty feature set")]
    NoFeatures,
    #[error("series index {0} out of range")]
    UnknownSeries(usize),
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("rows {start}..{end} need {p} lags of history inside a series of length {len}")]
    WindowOutOfRange { start: usize, end: usize, p: usize, len: usize },
    #[error("no history for lags 1..{p} at t = {t}")]
    MissingHistory { t: usize, p: usize },
    #[error("evaluation span of {0} points is too short (need at least 2)")]
    SpanTooShort(usize),
    #[error("span {start}..{end} needs {window} buckets of history inside a series of length {len}")]
    SpanOutOfRange { start: usize, end: usize, window: usize, len: usize },
    #[error("series of length {len} is too short for any grid cell")]
    NoGridCells { len: usize },
    #[error("at t = {t}: {source}")]
    AtStep {
        t: usize,
        #[source]
        source: Box<ForecastError>,
    },
}

impl ForecastError {
    /// True for failures of the arithmetic itself (singular or non-finite
    /// systems), as opposed to bad arguments or data that is too short.
    pub fn is_numeric(&self) -> bool {
        match self {
            ForecastError::Underdetermined { .. } | ForecastError::NonFinite | ForecastError::Numerical(_) => true,
            ForecastError::AtStep { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
