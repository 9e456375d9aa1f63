//! Python bindings: model fitting, rolling forecasts, grid search, port
//! statistics and full pipeline runs.
//!
//! Series are passed as a list of equally long float lists; `target` and
//! `features` index into that list.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use darkprobe::analytics::{cumulative_coverage, PortTally};
use darkprobe::forecast::{
    self, DesignParams, EvalReport, ForecastError, ForecastModel, GridConfig, ModelKind, RollingOptions,
};
use darkprobe::pipeline::{run_pipeline, RunConfig};
use darkprobe::synth::{gen_ar, ArSpec};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn forecast_error(e: ForecastError) -> PyErr {
    if e.is_numeric() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        value_error(e)
    }
}

fn parse_kind(model: &str) -> PyResult<ModelKind> {
    match model {
        "ar" => Ok(ModelKind::Ar),
        "var" => Ok(ModelKind::Var),
        other => Err(value_error(format!("model must be \"ar\" or \"var\", not {other:?}"))),
    }
}

/// Target first, then every other series (the default VAR feature set).
fn default_features(n: usize, target: usize) -> Vec<usize> {
    std::iter::once(target).chain((0..n).filter(|&j| j != target)).collect()
}

fn features_for(kind: ModelKind, series: &[Vec<f64>], target: usize, features: Option<Vec<usize>>) -> Vec<usize> {
    match kind {
        ModelKind::Ar => Vec::new(),
        ModelKind::Var => features.unwrap_or_else(|| default_features(series.len(), target)),
    }
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("r2", r.r2)?;
    d.set_item("p", r.params.p)?;
    d.set_item("window", r.params.window)?;
    d.set_item("t", r.predictions.iter().map(|p| p.t).collect::<Vec<_>>())?;
    d.set_item("y_true", r.y_true())?;
    d.set_item("y_pred", r.y_pred())?;
    d.set_item("features", r.features.clone())?;
    d.set_item("degenerate_fits", r.degenerate_fits)?;
    Ok(d)
}

/// Least-squares fit on every response row `p..len`. Returns the weights
/// (intercept, then `p` lags per feature) and the degeneracy flag.
#[pyfunction]
#[pyo3(signature = (series, target, p, model = "ar", features = None))]
fn fit<'py>(
    py: Python<'py>,
    series: Vec<Vec<f64>>,
    target: usize,
    p: usize,
    model: &str,
    features: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = parse_kind(model)?;
    let feats = features_for(kind, &series, target, features);
    let len = series.first().map_or(0, Vec::len);
    let scaling = RollingOptions::for_kind(kind).scaling;
    let m = ForecastModel::fit(&series, target, kind, &feats, p, p..len, scaling).map_err(forecast_error)?;
    let d = PyDict::new(py);
    d.set_item("weights", m.weights)?;
    d.set_item("features", m.features)?;
    d.set_item("degenerate", m.degenerate)?;
    Ok(d)
}

/// Rolling one-step-ahead forecast over `[start, end)`; the span defaults
/// to `[window, len)`.
#[pyfunction]
#[pyo3(signature = (series, target, p, window, model = "ar", features = None, start = None, end = None))]
#[allow(clippy::too_many_arguments)]
fn rolling_forecast<'py>(
    py: Python<'py>,
    series: Vec<Vec<f64>>,
    target: usize,
    p: usize,
    window: usize,
    model: &str,
    features: Option<Vec<usize>>,
    start: Option<usize>,
    end: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = parse_kind(model)?;
    let feats = features_for(kind, &series, target, features);
    let params = DesignParams::new(p, window).map_err(forecast_error)?;
    let len = series.first().map_or(0, Vec::len);
    let span = start.unwrap_or(window)..end.unwrap_or(len);
    let r = forecast::rolling_forecast(&series, target, kind, params, &feats, span, RollingOptions::for_kind(kind))
        .map_err(forecast_error)?;
    report_dict(py, &r)
}

/// Exhaustive `(p, window)` search scored on the trailing quarter. The
/// result holds the best report plus every cell as `(p, window, r2)`.
#[pyfunction]
#[pyo3(signature = (series, target, model = "ar", p_max = 10, features = None))]
fn grid_search<'py>(
    py: Python<'py>,
    series: Vec<Vec<f64>>,
    target: usize,
    model: &str,
    p_max: usize,
    features: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = parse_kind(model)?;
    let feats = features_for(kind, &series, target, features);
    let cfg = GridConfig {
        p_max,
        ..GridConfig::default()
    };
    let g = forecast::grid_search(&series, target, kind, &feats, &cfg).map_err(forecast_error)?;
    let d = report_dict(py, &g.report)?;
    let cells: Vec<(usize, usize, f64)> = g.cells.iter().map(|c| (c.params.p, c.params.window, c.r2)).collect();
    d.set_item("cells", cells)?;
    Ok(d)
}

/// Coefficient of determination of `y_pred` against `y_true`.
#[pyfunction]
fn r_squared(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    if y_true.len() != y_pred.len() {
        return Err(value_error("y_true and y_pred differ in length"));
    }
    Ok(forecast::r_squared(&y_true, &y_pred))
}

/// `(port, count, share)` by descending count for a list of destination ports.
#[pyfunction]
fn port_ranking(ports: Vec<u16>) -> Vec<(u16, u64, f64)> {
    let mut tally = PortTally::default();
    for p in ports {
        tally.add(p);
    }
    tally.ranking().entries.iter().map(|e| (e.key, e.count, e.share)).collect()
}

/// Smallest number of top ports covering `threshold` of the traffic, or
/// `None` for an empty list.
#[pyfunction]
fn ports_for_coverage(ports: Vec<u16>, threshold: f64) -> PyResult<Option<usize>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(value_error("threshold must lie in [0, 1]"));
    }
    let mut tally = PortTally::default();
    for p in ports {
        tally.add(p);
    }
    Ok(cumulative_coverage(&tally.ranking()).n_for(threshold))
}

/// Synthetic AR series `x(t) = w0 + Σ w_h·x(t−h) + ε`.
#[pyfunction]
#[pyo3(signature = (weights, length, innovation_std = 0.0, seed = 0))]
fn generate_ar(weights: Vec<f64>, length: usize, innovation_std: f64, seed: u64) -> PyResult<Vec<f64>> {
    gen_ar(&ArSpec {
        seed: Some(seed),
        weights,
        innovation_std,
        length,
        initial: None,
        regime_switches: Vec::new(),
        burn_in: None,
    })
    .map_err(value_error)
}

/// Runs the pipeline described by a TOML config into `out_dir` and returns
/// the manifest as JSON text.
#[pyfunction]
fn run(config_toml: &str, out_dir: PathBuf) -> PyResult<String> {
    let mut cfg = RunConfig::from_toml(config_toml).map_err(value_error)?;
    cfg.out_dir = out_dir;
    let summary = run_pipeline(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    serde_json::to_string(&summary.manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
#[pyo3(name = "darkprobe")]
fn darkprobe_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(rolling_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_function(wrap_pyfunction!(port_ranking, m)?)?;
    m.add_function(wrap_pyfunction!(ports_for_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(generate_ar, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn var_features_put_target_first() {
        assert_eq!(default_features(4, 2), vec![2, 0, 1, 3]);
        assert_eq!(default_features(1, 0), vec![0]);
    }

    #[test]
    fn ar_ignores_features() {
        let data = vec![vec![0.0; 3], vec![0.0; 3]];
        assert!(features_for(ModelKind::Ar, &data, 1, Some(vec![0, 1])).is_empty());
        assert_eq!(features_for(ModelKind::Var, &data, 1, None), vec![1, 0]);
    }
}
