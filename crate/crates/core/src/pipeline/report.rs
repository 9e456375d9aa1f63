//! Plain-text renderings of analysis results.

use std::fmt::{Display, Write as _};

use serde::{Deserialize, Serialize};

use crate::analytics::{CoverageCurve, ProberProfile, Ranking, COVERAGE_THRESHOLDS};
use crate::forecast::EvalReport;
use crate::timeseries::Resolution;

pub fn ranking_csv<K: Display>(ranking: &Ranking<K>, key: &str) -> String {
    let mut out = format!("rank,{key},count,share\n");
    for (i, e) in ranking.entries.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{}", i + 1, e.key, e.count, e.share);
    }
    out
}

pub fn curve_csv(curve: &CoverageCurve, n: &str, value: &str) -> String {
    let mut out = format!("{n},{value}\n");
    for (k, v) in &curve.points {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    /// `None` when the curve never reaches the threshold (no traffic).
    pub n: Option<usize>,
}

pub fn coverage_thresholds(curve: &CoverageCurve) -> Vec<ThresholdRow> {
    COVERAGE_THRESHOLDS
        .iter()
        .map(|&threshold| ThresholdRow {
            threshold,
            n: curve.n_for(threshold),
        })
        .collect()
}

pub fn thresholds_csv(rows: &[ThresholdRow]) -> String {
    let mut out = String::from("threshold,n\n");
    for r in rows {
        let n = r.n.map(|n| n.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{}", r.threshold, n);
    }
    out
}

pub fn probers_csv(probers: &[ProberProfile]) -> String {
    let mut out = String::from("rank,src_ip,total_syn,mean_daily_rate,active_span_days,distinct_ports\n");
    for (i, p) in probers.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            p.src_ip,
            p.total_syn,
            p.mean_daily_rate,
            p.active_span_days,
            p.port_counts.len()
        );
    }
    out
}

/// One row of the per-port, per-resolution forecasting summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub port: u16,
    pub resolution: Resolution,
    /// Series length after dropping a partial trailing bucket.
    pub len: usize,
    /// `ok`, `too short`, or an error message.
    pub status: String,
    pub p: Option<usize>,
    pub window: Option<usize>,
    /// Validation-span R² (the final quarter of the series).
    pub r2_ar: Option<f64>,
    pub r2_var: Option<f64>,
    /// R² over every bucket from the window length to the end.
    pub r2_ar_full: Option<f64>,
    pub r2_var_full: Option<f64>,
    /// R² of `ŷ(t) = y(t−1)` on the validation span.
    pub r2_persistence: Option<f64>,
    /// Ports feeding the VAR model, most correlated first.
    pub var_ports: Vec<u16>,
    pub degenerate_fits: usize,
}

impl ForecastRow {
    pub fn empty(port: u16, resolution: Resolution, len: usize, status: impl Into<String>) -> Self {
        ForecastRow {
            port,
            resolution,
            len,
            status: status.into(),
            p: None,
            window: None,
            r2_ar: None,
            r2_var: None,
            r2_ar_full: None,
            r2_var_full: None,
            r2_persistence: None,
            var_ports: Vec::new(),
            degenerate_fits: 0,
        }
    }
}

fn opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn forecast_summary_csv(rows: &[ForecastRow]) -> String {
    let mut out = String::from(
        "port,resolution,len,status,p,window,r2_ar,r2_var,r2_ar_full,r2_var_full,r2_persistence,var_ports,degenerate_fits\n",
    );
    for r in rows {
        let ports: Vec<String> = r.var_ports.iter().map(u16::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.port,
            r.resolution,
            r.len,
            r.status,
            opt(&r.p),
            opt(&r.window),
            opt(&r.r2_ar),
            opt(&r.r2_var),
            opt(&r.r2_ar_full),
            opt(&r.r2_var_full),
            opt(&r.r2_persistence),
            ports.join(" "),
            r.degenerate_fits
        );
    }
    out
}

/// AR versus VAR on the validation span, one line per evaluated row.
pub fn comparison_csv(rows: &[ForecastRow]) -> String {
    let mut out = String::from("port,resolution,r2_ar,r2_var,var_minus_ar\n");
    for r in rows {
        if let (Some(a), Some(v)) = (r.r2_ar, r.r2_var) {
            let _ = writeln!(out, "{},{},{},{},{}", r.port, r.resolution, a, v, v - a);
        }
    }
    out
}

/// `bucket_start,y_true,y_pred` for a report whose indices map to
/// `bucket_starts`.
pub fn predictions_csv(report: &EvalReport, bucket_starts: &[i64]) -> String {
    let mut out = String::from("bucket_start,y_true,y_pred\n");
    for p in &report.predictions {
        let start = bucket_starts.get(p.t).map(ToString::to_string).unwrap_or_else(|| p.t.to_string());
        let _ = writeln!(out, "{},{},{}", start, p.y_true, p.y_pred);
    }
    out
}

/// AR and VAR predictions side by side over the same span.
pub fn paired_predictions_csv(ar: &EvalReport, var: &EvalReport, bucket_starts: &[i64]) -> String {
    let mut out = String::from("bucket_start,y_true,y_pred_ar,y_pred_var\n");
    for (a, v) in ar.predictions.iter().zip(&var.predictions) {
        debug_assert_eq!(a.t, v.t);
        let _ = writeln!(out, "{},{},{},{}", bucket_starts[a.t], a.y_true, a.y_pred, v.y_pred);
    }
    out
}
