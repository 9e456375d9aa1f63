/// Coefficient of determination `1 − SS_res / SS_tot`, with ȳ the mean of
/// `y_true`. May be negative.
///
/// When `y_true` has zero variance the ratio is undefined: a perfect
/// prediction scores 1 and anything else scores `-inf`. "Perfect" allows
/// rounding noise of `1e-9 · max(1, |ȳ|)` per point, since a least-squares
/// fit on a constant window reproduces the constant only to within a few ulps.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> f64 {
    assert_eq!(y_true.len(), y_pred.len(), "r_squared needs equal lengths");
    assert!(y_true.len() >= 2, "r_squared needs at least two points");
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    if ss_tot == 0.0 {
        let tol = 1e-9 * mean.abs().max(1.0);
        let exact = y_true.iter().zip(y_pred).all(|(y, p)| (y - p).abs() <= tol);
        return if exact { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

/// Sample Pearson correlation. Returns 0 when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "pearson needs equal lengths");
    assert!(x.len() >= 2, "pearson needs at least two points");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// R² of the persistence forecast `ŷ(t) = y(t−1)` over `span`, the floor any
/// fitted model should beat.
pub fn persistence_r2(series: &[f64], span: std::ops::Range<usize>) -> f64 {
    assert!(span.start >= 1 && span.end <= series.len());
    let truth = &series[span.clone()];
    let pred = &series[span.start - 1..span.end - 1];
    r_squared(truth, pred)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_reference_values() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&y, &y), 1.0);
        assert_eq!(r_squared(&y, &[2.0, 2.0, 2.0]), 0.0);
        assert!((r_squared(&y, &[1.0, 2.0, 4.0]) - 0.5).abs() < 1e-15);
        assert!(r_squared(&y, &[3.0, 2.0, 1.0]) < 0.0);
    }

    #[test]
    fn r2_zero_variance_conventions() {
        assert_eq!(r_squared(&[5.0, 5.0], &[5.0, 5.0]), 1.0);
        assert_eq!(r_squared(&[5.0, 5.0], &[5.0, 5.1]), f64::NEG_INFINITY);
        assert_eq!(r_squared(&[5.0, 5.0], &[5.0, 5.0 + 1e-14]), 1.0);
    }

    #[test]
    fn pearson_reference_values() {
        let x = [1.0, 2.0, 3.0, 7.0];
        assert!((pearson(&x, &x) - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg) + 1.0).abs() < 1e-15);
        // sxy = 3, sxx = 2, syy = 14/3 → 3 / sqrt(28/3) = 0.9819805060619657
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]) - 0.9819805060619657).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn pearson_ignores_positive_scaling() {
        let x = [0.3, 1.9, -2.0, 4.4, 0.0];
        let y = [1.0, 2.5, -1.0, 3.0, 0.2];
        let scaled: Vec<f64> = x.iter().map(|v| v * 37.5).collect();
        assert!((pearson(&x, &y) - pearson(&scaled, &y)).abs() < 1e-12);
    }

    #[test]
    fn persistence_baseline() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        // Predictions lag by one: residuals all 1, SS_tot over [2..5] = 5.
        assert!((persistence_r2(&s, 1..5) - (1.0 - 4.0 / 5.0)).abs() < 1e-12);
    }
}
