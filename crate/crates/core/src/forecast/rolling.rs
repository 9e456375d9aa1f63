use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::metrics::r_squared;
use super::model::{common_len, ForecastModel, ModelKind, Scaling};
use super::ForecastError;
use crate::timeseries::Resolution;

/// Autoregressive order `p` and rolling-window length `window` (in buckets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DesignParams {
    pub p: usize,
    pub window: usize,
}

impl DesignParams {
    /// Requires `p ≥ 1` and `window ≥ 10·p`.
    pub fn new(p: usize, window: usize) -> Result<Self, ForecastError> {
        if p == 0 {
            return Err(ForecastError::BadParams("autoregressive order must be at least 1".into()));
        }
        if window < 10 * p {
            return Err(ForecastError::BadParams(format!(
                "window {window} is shorter than 10 × p = {}",
                10 * p
            )));
        }
        Ok(DesignParams { p, window })
    }

    /// Training rows for predicting `t`: the `window` buckets before `t`,
    /// minus any leading rows that would reach before the series start.
    pub fn training_rows(&self, t: usize) -> Range<usize> {
        t.saturating_sub(self.window).max(self.p)..t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollingOptions {
    /// Refit every `stride` steps; 1 refits before every prediction.
    pub stride: usize,
    pub scaling: Scaling,
}

impl Default for RollingOptions {
    fn default() -> Self {
        RollingOptions {
            stride: 1,
            scaling: Scaling::None,
        }
    }
}

impl RollingOptions {
    /// Defaults for a model kind: AR on raw counts, VAR on standardised features.
    pub fn for_kind(kind: ModelKind) -> Self {
        RollingOptions {
            stride: 1,
            scaling: match kind {
                ModelKind::Ar => Scaling::None,
                ModelKind::Var => Scaling::Standardize,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub t: usize,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Index of the target series.
    pub target: usize,
    pub target_port: Option<u16>,
    pub resolution: Option<Resolution>,
    pub kind: ModelKind,
    pub params: DesignParams,
    pub features: Vec<usize>,
    pub predictions: Vec<Prediction>,
    pub r2: f64,
    pub n_windows: usize,
    /// Fits that hit a rank-deficient window or a constant feature.
    pub degenerate_fits: usize,
}

impl EvalReport {
    pub fn y_true(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.y_true).collect()
    }

    pub fn y_pred(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.y_pred).collect()
    }

    /// R² over the predictions whose index lies in `span`.
    pub fn r2_over(&self, span: Range<usize>) -> Option<f64> {
        let (t, p): (Vec<f64>, Vec<f64>) = self
            .predictions
            .iter()
            .filter(|p| span.contains(&p.t))
            .map(|p| (p.y_true, p.y_pred))
            .unzip();
        (t.len() >= 2).then(|| r_squared(&t, &p))
    }
}

/// Walks `span` one step at a time: fit on the trailing window, predict the
/// current bucket, move on. R² is computed over the whole span.
pub fn rolling_forecast(
    data: &[Vec<f64>],
    target: usize,
    kind: ModelKind,
    params: DesignParams,
    features: &[usize],
    span: Range<usize>,
    opts: RollingOptions,
) -> Result<EvalReport, ForecastError> {
    let len = common_len(data)?;
    if span.len() < 2 {
        return Err(ForecastError::SpanTooShort(span.len()));
    }
    if span.start < params.window || span.end > len {
        return Err(ForecastError::SpanOutOfRange {
            start: span.start,
            end: span.end,
            window: params.window,
            len,
        });
    }
    let stride = opts.stride.max(1);
    let features: Vec<usize> = match kind {
        ModelKind::Ar => vec![target],
        ModelKind::Var => features.to_vec(),
    };

    let mut predictions = Vec::with_capacity(span.len());
    let mut model: Option<ForecastModel> = None;
    let mut degenerate_fits = 0;
    for (step, t) in span.clone().enumerate() {
        if step % stride == 0 || model.is_none() {
            let fitted = ForecastModel::fit(data, target, kind, &features, params.p, params.training_rows(t), opts.scaling)
                .map_err(|e| ForecastError::AtStep {
                    t,
                    source: Box::new(e),
                })?;
            degenerate_fits += usize::from(fitted.degenerate);
            model = Some(fitted);
        }
        let y_pred = model.as_ref().expect("fitted above").predict_one(data, t)?;
        predictions.push(Prediction {
            t,
            y_true: data[target][t],
            y_pred,
        });
    }

    let truth: Vec<f64> = predictions.iter().map(|p| p.y_true).collect();
    let pred: Vec<f64> = predictions.iter().map(|p| p.y_pred).collect();
    Ok(EvalReport {
        target,
        target_port: None,
        resolution: None,
        kind,
        params,
        features,
        n_windows: predictions.len(),
        r2: r_squared(&truth, &pred),
        predictions,
        degenerate_fits,
    })
}
