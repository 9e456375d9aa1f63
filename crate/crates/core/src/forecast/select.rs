use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::metrics::{pearson, r_squared};
use super::model::{common_len, ForecastModel, ModelKind, Scaling};
use super::rolling::{rolling_forecast, DesignParams, EvalReport, RollingOptions};
use super::ForecastError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Largest feature set tried.
    pub k_max: usize,
    /// Fraction of the window used for ranking and fitting; the rest scores
    /// each candidate set.
    pub select_frac: f64,
    /// Candidate series; `None` means every series, the target included.
    pub candidates: Option<Vec<usize>>,
    /// Relative cut in validation squared error a larger set must achieve
    /// over the current best to replace it. 0 takes the plain maximum.
    pub min_improvement: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k_max: 30,
            select_frac: 0.75,
            candidates: None,
            min_improvement: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    /// Retained series, most correlated first.
    pub features: Vec<usize>,
    pub k: usize,
    /// Candidates with nonzero variance and their score, best first.
    pub ranking: Vec<(usize, f64)>,
    /// R² of the chosen set on the held-out part of the window.
    pub validation_r2: f64,
    /// No usable candidate: the model reduces to AR.
    pub fallback_ar: bool,
}

/// Chooses the VAR feature set for the window that ends just before
/// `position`.
///
/// The window is split chronologically into a selection part F and a
/// validation part V. Each candidate `j` is scored on F by
/// `max_h |pearson(x_target(t), x_j(t−h))|` for `h ∈ 1..=p`, the lag
/// structure the model will actually see. The top-k candidates for growing k
/// are fit on F and scored by R² on V. A larger k only wins if it lowers the
/// validation squared error by `min_improvement` relative to the best so far,
/// which keeps noise candidates from being admitted on chance wobbles.
pub fn select_features(
    data: &[Vec<f64>],
    target: usize,
    params: DesignParams,
    position: usize,
    cfg: &SelectionConfig,
) -> Result<FeatureSelection, ForecastError> {
    let len = common_len(data)?;
    if target >= data.len() {
        return Err(ForecastError::UnknownSeries(target));
    }
    if position > len || position < params.p + 4 {
        return Err(ForecastError::MissingHistory { t: position, p: params.p });
    }
    let window = params.training_rows(position);
    let n_f = ((cfg.select_frac * window.len() as f64).floor() as usize).clamp(2, window.len().saturating_sub(2));
    let f_rows = window.start..window.start + n_f;
    let v_rows = f_rows.end..window.end;
    if v_rows.len() < 2 {
        return Err(ForecastError::SpanTooShort(v_rows.len()));
    }

    let candidates: Vec<usize> = match &cfg.candidates {
        Some(c) => c.clone(),
        None => (0..data.len()).collect(),
    };
    let y: Vec<f64> = data[target][f_rows.clone()].to_vec();
    let mut ranking: Vec<(usize, f64)> = Vec::new();
    for &j in &candidates {
        let series = data.get(j).ok_or(ForecastError::UnknownSeries(j))?;
        let mut best: Option<f64> = None;
        for h in 1..=params.p {
            let lagged = &series[f_rows.start - h..f_rows.end - h];
            if is_constant(lagged) {
                continue;
            }
            let r = pearson(&y, lagged).abs();
            best = Some(best.map_or(r, |b: f64| b.max(r)));
        }
        if let Some(score) = best {
            ranking.push((j, score));
        }
    }
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    if ranking.is_empty() || is_constant(&y) {
        return Ok(FeatureSelection {
            features: vec![target],
            k: 1,
            ranking,
            validation_r2: f64::NEG_INFINITY,
            fallback_ar: true,
        });
    }

    let truth: Vec<f64> = data[target][v_rows.clone()].to_vec();
    let mut best: Option<(usize, f64)> = None;
    for k in 1..=cfg.k_max.min(ranking.len()) {
        if f_rows.len() < 1 + params.p * k {
            break;
        }
        let features: Vec<usize> = ranking[..k].iter().map(|&(j, _)| j).collect();
        let model = ForecastModel::fit(data, target, ModelKind::Var, &features, params.p, f_rows.clone(), Scaling::Standardize)?;
        let pred = v_rows
            .clone()
            .map(|t| model.predict_one(data, t))
            .collect::<Result<Vec<_>, _>>()?;
        let r2 = r_squared(&truth, &pred);
        let r2 = if r2.is_nan() { f64::NEG_INFINITY } else { r2 };
        if best.is_none_or(|(_, b)| improves(r2, b, cfg.min_improvement)) {
            best = Some((k, r2));
        }
    }
    let (k, validation_r2) = best.unwrap_or((1, f64::NEG_INFINITY));
    Ok(FeatureSelection {
        features: ranking[..k].iter().map(|&(j, _)| j).collect(),
        k,
        ranking,
        validation_r2,
        fallback_ar: false,
    })
}

/// `r2` cuts the residual share `1 − best` by at least `min` (relative).
fn improves(r2: f64, best: f64, min: f64) -> bool {
    if best == f64::NEG_INFINITY {
        return r2 > best;
    }
    r2 > best + min * (1.0 - best)
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

/// Rolling VAR over `span` with features chosen by [`select_features`] at
/// the start of the span, and again every `reselect_every` steps if given.
pub fn var_forecast_with_selection(
    data: &[Vec<f64>],
    target: usize,
    params: DesignParams,
    span: Range<usize>,
    cfg: &SelectionConfig,
    reselect_every: Option<usize>,
    opts: RollingOptions,
) -> Result<(EvalReport, Vec<FeatureSelection>), ForecastError> {
    if span.len() < 2 {
        return Err(ForecastError::SpanTooShort(span.len()));
    }
    let segment = reselect_every.filter(|&s| s > 0).unwrap_or(span.len());
    let mut selections = Vec::new();
    let mut predictions = Vec::with_capacity(span.len());
    let mut degenerate_fits = 0;
    let mut start = span.start;
    while start < span.end {
        let end = (start + segment).min(span.end);
        let sel = select_features(data, target, params, start, cfg)?;
        let kind = if sel.fallback_ar { ModelKind::Ar } else { ModelKind::Var };
        // A one-point tail segment is widened backwards for the report and trimmed after.
        let seg_start = if end - start < 2 { start - 1 } else { start };
        let seg = rolling_forecast(data, target, kind, params, &sel.features, seg_start..end, opts)?;
        degenerate_fits += seg.degenerate_fits;
        predictions.extend(seg.predictions.into_iter().filter(|p| p.t >= start));
        selections.push(sel);
        start = end;
    }

    let truth: Vec<f64> = predictions.iter().map(|p| p.y_true).collect();
    let pred: Vec<f64> = predictions.iter().map(|p| p.y_pred).collect();
    let first = &selections[0];
    Ok((
        EvalReport {
            target,
            target_port: None,
            resolution: None,
            kind: ModelKind::Var,
            params,
            features: first.features.clone(),
            n_windows: predictions.len(),
            r2: r_squared(&truth, &pred),
            predictions,
            degenerate_fits,
        },
        selections,
    ))
}
