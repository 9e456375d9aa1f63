use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lstsq::fit_least_squares;
use super::ForecastError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Own lags only.
    Ar,
    /// Lags of a selected set of series.
    Var,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ar" => Ok(ModelKind::Ar),
            "var" => Ok(ModelKind::Var),
            other => Err(format!("unknown model {other:?} (expected ar or var)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Ar => "ar",
            ModelKind::Var => "var",
        })
    }
}

/// Regressor preprocessing. The response is never transformed, so
/// predictions are always in the original units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    #[default]
    None,
    /// Zero mean, unit standard deviation per feature series, with the
    /// statistics taken from the training rows.
    Standardize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub mean: f64,
    pub std: f64,
}

impl FeatureScale {
    pub const IDENTITY: FeatureScale = FeatureScale { mean: 0.0, std: 1.0 };

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Checks that every series has the same length and returns it.
pub(crate) fn common_len(data: &[Vec<f64>]) -> Result<usize, ForecastError> {
    let len = data.first().map(Vec::len).ok_or(ForecastError::NoSeries)?;
    for s in data {
        if s.len() != len {
            return Err(ForecastError::LengthMismatch {
                expected: len,
                found: s.len(),
            });
        }
    }
    Ok(len)
}

fn check_indices(data: &[Vec<f64>], target: usize, features: &[usize]) -> Result<(), ForecastError> {
    if features.is_empty() {
        return Err(ForecastError::NoFeatures);
    }
    for &j in std::iter::once(&target).chain(features) {
        if j >= data.len() {
            return Err(ForecastError::UnknownSeries(j));
        }
    }
    Ok(())
}

/// Per-feature statistics over every value that appears as a regressor for
/// `rows`, i.e. indices `rows.start − p .. rows.end − 1`. A constant feature
/// is only centred (std 1); its column is then all zeros and gets weight 0.
pub fn fit_scaling(data: &[Vec<f64>], features: &[usize], p: usize, rows: &Range<usize>) -> (Vec<FeatureScale>, bool) {
    let mut degenerate = false;
    let scales = features
        .iter()
        .map(|&j| {
            let vals = &data[j][rows.start - p..rows.end - 1];
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            if std > 0.0 && std.is_finite() {
                FeatureScale { mean, std }
            } else {
                degenerate = true;
                FeatureScale { mean, std: 1.0 }
            }
        })
        .collect();
    (scales, degenerate)
}

/// Supervised view of the series: one row per `t` in `rows`, regressors
/// `[1, x_j(t−1), …, x_j(t−p)]` for each feature `j` in order, response
/// `x_target(t)`.
pub fn make_design_matrix(
    data: &[Vec<f64>],
    target: usize,
    features: &[usize],
    p: usize,
    rows: Range<usize>,
) -> Result<(DMatrix<f64>, DVector<f64>), ForecastError> {
    design(data, target, features, p, rows, None)
}

fn design(
    data: &[Vec<f64>],
    target: usize,
    features: &[usize],
    p: usize,
    rows: Range<usize>,
    scales: Option<&[FeatureScale]>,
) -> Result<(DMatrix<f64>, DVector<f64>), ForecastError> {
    let len = common_len(data)?;
    check_indices(data, target, features)?;
    if p == 0 {
        return Err(ForecastError::BadParams("autoregressive order must be at least 1".into()));
    }
    if rows.start < p || rows.end > len || rows.is_empty() {
        return Err(ForecastError::WindowOutOfRange {
            start: rows.start,
            end: rows.end,
            p,
            len,
        });
    }
    let cols = 1 + p * features.len();
    let n = rows.len();
    let mut x = DMatrix::<f64>::zeros(n, cols);
    for (r, t) in rows.clone().enumerate() {
        x[(r, 0)] = 1.0;
        for (fi, &j) in features.iter().enumerate() {
            let scale = scales.map_or(FeatureScale::IDENTITY, |s| s[fi]);
            for h in 1..=p {
                x[(r, 1 + fi * p + h - 1)] = scale.apply(data[j][t - h]);
            }
        }
    }
    let y = DVector::from_iterator(n, rows.map(|t| data[target][t]));
    Ok((x, y))
}

/// Weights fitted on one window position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub target: usize,
    pub kind: ModelKind,
    pub p: usize,
    /// Series feeding the model; `[target]` for AR.
    pub features: Vec<usize>,
    /// Intercept, then `p` lag weights per feature in `features` order.
    pub weights: Vec<f64>,
    pub scaling: Vec<FeatureScale>,
    /// The window was rank deficient (or a feature was constant); the
    /// weights are the minimum-norm solution.
    pub degenerate: bool,
}

impl ForecastModel {
    /// Fits on the response rows `rows`.
    pub fn fit(
        data: &[Vec<f64>],
        target: usize,
        kind: ModelKind,
        features: &[usize],
        p: usize,
        rows: Range<usize>,
        scaling: Scaling,
    ) -> Result<Self, ForecastError> {
        let features: Vec<usize> = match kind {
            ModelKind::Ar => vec![target],
            ModelKind::Var => features.to_vec(),
        };
        let len = common_len(data)?;
        check_indices(data, target, &features)?;
        if p == 0 || rows.start < p || rows.end > len || rows.is_empty() {
            return Err(ForecastError::WindowOutOfRange {
                start: rows.start,
                end: rows.end,
                p,
                len,
            });
        }
        let (scales, constant_feature) = match scaling {
            Scaling::None => (vec![FeatureScale::IDENTITY; features.len()], false),
            Scaling::Standardize => fit_scaling(data, &features, p, &rows),
        };
        let (x, y) = design(data, target, &features, p, rows, Some(&scales))?;
        let sol = fit_least_squares(&x, &y)?;
        Ok(ForecastModel {
            target,
            kind,
            p,
            features,
            degenerate: sol.rank_deficient() || constant_feature,
            weights: sol.weights.iter().copied().collect(),
            scaling: scales,
        })
    }

    /// One-step-ahead prediction of `x_target(t)` from lags `t−1..t−p`.
    /// `t` may equal the series length (a true forecast).
    pub fn predict_one(&self, data: &[Vec<f64>], t: usize) -> Result<f64, ForecastError> {
        let len = common_len(data)?;
        if t < self.p || t > len {
            return Err(ForecastError::MissingHistory { t, p: self.p });
        }
        let mut y = self.weights[0];
        for (fi, &j) in self.features.iter().enumerate() {
            let series = data.get(j).ok_or(ForecastError::UnknownSeries(j))?;
            let scale = self.scaling[fi];
            for h in 1..=self.p {
                y += self.weights[1 + fi * self.p + h - 1] * scale.apply(series[t - h]);
            }
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_matrix_small_example() {
        let data = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let (x, y) = make_design_matrix(&data, 0, &[0], 1, 1..4).unwrap();
        assert_eq!(x, DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0]));
        assert_eq!(y, DVector::from_vec(vec![2.0, 3.0, 4.0]));
    }

    #[test]
    fn order_two_needs_two_lags() {
        let data = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]];
        assert!(make_design_matrix(&data, 0, &[0], 2, 1..5).is_err());
        let (x, y) = make_design_matrix(&data, 0, &[0], 2, 2..5).unwrap();
        assert_eq!(x.nrows(), 3);
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 1.0]);
        assert_eq!(y[0], 3.0);
        assert!(make_design_matrix(&data, 0, &[0], 1, 3..3).is_err());
        assert!(make_design_matrix(&data, 0, &[], 1, 1..3).is_err());
        assert!(make_design_matrix(&data, 0, &[1], 1, 1..3).is_err());
    }

    #[test]
    fn design_matrix_loop_oracle() {
        let mut s = 7u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let data: Vec<Vec<f64>> = (0..3).map(|_| (0..60).map(|_| rnd()).collect()).collect();
        let features = [2usize, 0];
        let p = 3;
        let (x, y) = make_design_matrix(&data, 1, &features, p, 10..50).unwrap();
        for (r, t) in (10..50).enumerate() {
            assert_eq!(y[r], data[1][t]);
            let mut expected = vec![1.0];
            for &j in &features {
                for h in 1..=p {
                    expected.push(data[j][t - h]);
                }
            }
            assert_eq!(x.row(r).iter().copied().collect::<Vec<_>>(), expected);
        }
    }

    #[test]
    fn zero_weights_and_persistence() {
        let data = vec![vec![3.0, 9.0, 4.0]];
        let mut m = ForecastModel {
            target: 0,
            kind: ModelKind::Ar,
            p: 1,
            features: vec![0],
            weights: vec![2.5, 0.0],
            scaling: vec![FeatureScale::IDENTITY],
            degenerate: false,
        };
        assert_eq!(m.predict_one(&data, 2).unwrap(), 2.5);
        m.weights = vec![0.0, 1.0];
        assert_eq!(m.predict_one(&data, 2).unwrap(), 9.0);
        assert_eq!(m.predict_one(&data, 3).unwrap(), 4.0);
        assert!(matches!(m.predict_one(&data, 0), Err(ForecastError::MissingHistory { .. })));
        assert!(m.predict_one(&data, 4).is_err());
    }

    #[test]
    fn prediction_matches_hand_evaluation() {
        let data = vec![
            vec![1.0, 4.0, 2.0, 8.0, 5.0, 7.0, 3.0, 6.0, 9.0, 2.0, 4.0, 1.0],
            vec![0.5, 0.1, 0.9, 0.3, 0.8, 0.2, 0.4, 0.6, 0.7, 0.05, 0.95, 0.33],
        ];
        let m = ForecastModel::fit(&data, 0, ModelKind::Var, &[0, 1], 2, 2..11, Scaling::Standardize).unwrap();
        let t = 11;
        let w = &m.weights;
        let s = &m.scaling;
        let by_hand = w[0]
            + w[1] * (data[0][10] - s[0].mean) / s[0].std
            + w[2] * (data[0][9] - s[0].mean) / s[0].std
            + w[3] * (data[1][10] - s[1].mean) / s[1].std
            + w[4] * (data[1][9] - s[1].mean) / s[1].std;
        assert!((m.predict_one(&data, t).unwrap() - by_hand).abs() < 1e-12);
        assert_eq!(m.weights.len(), 1 + 2 * 2);
        assert!(m.scaling.iter().all(|s| s.std > 0.0));
    }

    #[test]
    fn constant_feature_is_flagged() {
        let data = vec![vec![1.0, 2.0, 1.5, 3.0, 2.2, 2.8, 1.1], vec![5.0; 7]];
        let m = ForecastModel::fit(&data, 0, ModelKind::Var, &[0, 1], 1, 1..7, Scaling::Standardize).unwrap();
        assert!(m.degenerate);
        assert!(m.weights[2].abs() < 1e-12);
    }
}
