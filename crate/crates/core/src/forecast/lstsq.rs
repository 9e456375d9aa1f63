//! Dense least squares via Householder QR.
//!
//! `X = QR` reduces `min ‖XW − y‖` to the square system `RW = Qᵀy`, which
//! has the same solution as the normal equation `(XᵀX)W = Xᵀy` when X has
//! full column rank, without squaring the condition number. The singular
//! values of `R` decide the numerical rank: at full rank `R` is solved by
//! back substitution, otherwise through its SVD so a rank-deficient window
//! still yields the minimum-norm minimiser instead of failing.
//!
//! The SVD is taken of `Rᵀ` rather than `R`: nalgebra's SVD of an upper
//! triangular matrix with strongly graded columns can come back with a
//! relative reconstruction error near 1e-4, while the lower triangular
//! transpose factors to machine precision.

use nalgebra::{DMatrix, DVector};

use super::ForecastError;

#[derive(Debug, Clone, PartialEq)]
pub struct LstsqSolution {
    pub weights: DVector<f64>,
    /// Numerical rank of X.
    pub rank: usize,
}

impl LstsqSolution {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.weights.len()
    }
}

/// Solves `min ‖XW − y‖₂`, returning the minimum-norm solution when X is
/// rank deficient.
pub fn fit_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LstsqSolution, ForecastError> {
    let (rows, cols) = x.shape();
    if rows != y.len() {
        return Err(ForecastError::LengthMismatch {
            expected: rows,
            found: y.len(),
        });
    }
    if cols == 0 || rows < cols {
        return Err(ForecastError::Underdetermined { rows, cols });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(ForecastError::NonFinite);
    }

    let qr = x.clone().qr();
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let rhs = qty.rows(0, cols).into_owned();
    let r = qr.unpack_r();

    // Rᵀ = U Σ Vᵀ, so R⁺ = U Σ⁺ Vᵀ.
    let svd = r.transpose().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        // X is all zeros: every W fits equally, the minimum-norm one is 0.
        return Ok(LstsqSolution {
            weights: DVector::zeros(cols),
            rank: 0,
        });
    }
    let tol = sigma_max * rows.max(cols) as f64 * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank == cols {
        let weights = r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| ForecastError::Numerical("singular triangular factor".into()))?;
        return Ok(LstsqSolution { weights, rank });
    }
    let (Some(u), Some(v_t)) = (&svd.u, &svd.v_t) else {
        return Err(ForecastError::Numerical("SVD without singular vectors".into()));
    };
    let mut coeffs = v_t * &rhs;
    for (c, &s) in coeffs.iter_mut().zip(svd.singular_values.iter()) {
        *c = if s > tol { *c / s } else { 0.0 };
    }
    let weights = u * coeffs;
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(ForecastError::Numerical("non-finite weights".into()));
    }
    Ok(LstsqSolution { weights, rank })
}
