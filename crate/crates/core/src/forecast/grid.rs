use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{common_len, ModelKind};
use super::rolling::{rolling_forecast, DesignParams, EvalReport, RollingOptions};
use super::ForecastError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub p_min: usize,
    pub p_max: usize,
    /// Increment between successive window lengths.
    pub window_step: usize,
    /// Largest window as a fraction of the series length.
    pub max_window_frac: f64,
    /// Trailing fraction of the series used for validation.
    pub validation_frac: f64,
    pub stride: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            p_min: 1,
            p_max: 10,
            window_step: 10,
            max_window_frac: 0.75,
            validation_frac: 0.25,
            stride: 1,
        }
    }
}

/// Window lengths tried for order `p`: `10p, 10p + step, …` up to
/// `floor(max_window_frac · len)`.
pub fn grid_windows(p: usize, len: usize, cfg: &GridConfig) -> Vec<usize> {
    let max = (cfg.max_window_frac * len as f64).floor() as usize;
    (10 * p..=max).step_by(cfg.window_step.max(1)).collect()
}

/// The chronologically last `floor(validation_frac · len)` buckets.
pub fn validation_span(len: usize, cfg: &GridConfig) -> Range<usize> {
    let n = (cfg.validation_frac * len as f64).floor() as usize;
    len - n.min(len)..len
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub params: DesignParams,
    /// Validation R²; `-inf` when the cell could not be evaluated.
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: DesignParams,
    pub report: EvalReport,
    /// Every cell in `(p, window)` order.
    pub cells: Vec<GridCell>,
}

/// Exhaustive search over `(p, window)` scored by validation R². Ties go to
/// the smaller `p`, then the smaller window.
pub fn grid_search(
    data: &[Vec<f64>],
    target: usize,
    kind: ModelKind,
    features: &[usize],
    cfg: &GridConfig,
) -> Result<GridResult, ForecastError> {
    if cfg.p_min == 0 || cfg.p_min > cfg.p_max {
        return Err(ForecastError::BadParams(format!(
            "order range {}..={} is empty or starts at 0",
            cfg.p_min, cfg.p_max
        )));
    }
    let len = common_len(data)?;
    let span = validation_span(len, cfg);
    if span.len() < 2 {
        return Err(ForecastError::NoGridCells { len });
    }
    let params: Vec<DesignParams> = (cfg.p_min..=cfg.p_max)
        .flat_map(|p| {
            grid_windows(p, len, cfg)
                .into_iter()
                .filter(|&w| w <= span.start)
                .map(move |window| DesignParams { p, window })
        })
        .collect();
    if params.is_empty() {
        return Err(ForecastError::NoGridCells { len });
    }
    let opts = RollingOptions {
        stride: cfg.stride,
        ..RollingOptions::for_kind(kind)
    };

    let cells: Vec<GridCell> = params
        .par_iter()
        .map(|&params| {
            let r2 = rolling_forecast(data, target, kind, params, features, span.clone(), opts)
                .map(|r| r.r2)
                .unwrap_or(f64::NEG_INFINITY);
            GridCell {
                params,
                r2: if r2.is_nan() { f64::NEG_INFINITY } else { r2 },
            }
        })
        .collect();

    let best = pick_best(&cells);
    let report = rolling_forecast(data, target, kind, best.params, features, span, opts)?;
    Ok(GridResult {
        best: best.params,
        report,
        cells,
    })
}

/// First cell with the highest R²; `cells` is in `(p, window)` order.
fn pick_best(cells: &[GridCell]) -> GridCell {
    let mut best = cells[0];
    for c in &cells[1..] {
        if c.r2 > best.r2 {
            best = *c;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_grid_arithmetic() {
        let cfg = GridConfig::default();
        let w = grid_windows(1, 400, &cfg);
        assert_eq!(w.first(), Some(&10));
        assert_eq!(w.last(), Some(&300));
        assert_eq!(w.len(), 30);
        assert_eq!(grid_windows(3, 400, &cfg)[..2], [30, 40]);
        assert!(grid_windows(10, 120, &cfg).is_empty());
        assert_eq!(validation_span(400, &cfg), 300..400);
        assert_eq!(validation_span(401, &cfg), 301..401);
    }

    #[test]
    fn too_short_is_an_error() {
        let data = vec![vec![1.0; 12]];
        assert!(matches!(
            grid_search(&data, 0, ModelKind::Ar, &[], &GridConfig::default()),
            Err(ForecastError::NoGridCells { len: 12 })
        ));
    }

    #[test]
    fn ties_prefer_smaller_cells() {
        let cell = |p, window, r2| GridCell {
            params: DesignParams { p, window },
            r2,
        };
        let cells = [cell(1, 10, 0.5), cell(1, 20, 0.7), cell(2, 20, 0.7), cell(2, 30, 0.6)];
        assert_eq!(pick_best(&cells).params, DesignParams { p: 1, window: 20 });
        let cells = [cell(1, 10, f64::NEG_INFINITY), cell(1, 20, f64::NEG_INFINITY)];
        assert_eq!(pick_best(&cells).params.window, 10);
    }

    #[test]
    fn duplicated_series_pick_the_same_cell() {
        let mut s = 11u64;
        let mut x = vec![0.0, 0.0];
        for t in 2..240 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let e = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            x.push(1.0 + 0.6 * x[t - 1] - 0.2 * x[t - 2] + e);
        }
        let data = vec![x.clone(), x];
        let cfg = GridConfig {
            p_max: 3,
            ..Default::default()
        };
        let a = grid_search(&data, 0, ModelKind::Ar, &[], &cfg).unwrap();
        let b = grid_search(&data, 1, ModelKind::Ar, &[], &cfg).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.report.r2, b.report.r2);
        assert!(a.cells.iter().all(|c| c.r2 <= a.report.r2));
    }
}
