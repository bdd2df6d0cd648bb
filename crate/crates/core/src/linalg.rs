//! Small dense linear algebra on top of nalgebra: minimum-norm solves by
//! column-pivoted QR, and numeric rank by singular values.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Default relative threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Result of [`min_norm_transpose_solve`].
#[derive(Debug, Clone)]
pub struct Solve {
    pub x: DMatrix<f64>,
    /// `|R_11| / |R_nn|` of the pivoted factor.
    pub condition: f64,
}

/// Minimum-norm `X` with `A^T X = B` for tall or square `A` (`m x n`,
/// `m >= n`, `B` is `n x k`).
///
/// With `A P = Q R`, the system becomes `R^T (Q^T X) = P^T B`; the
/// minimum-norm solution lies in the range of `Q`. Fails with a rank
/// deficiency when some `|R_kk| < tol |R_11|`.
pub fn min_norm_transpose_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<Solve> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Shape(format!("need rows >= cols, got {m} x {n}")));
    }
    if b.nrows() != n {
        return Err(Error::Shape(format!("right-hand side has {} rows, expected {n}", b.nrows())));
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let q = qr.q();
    let diag: Vec<f64> = (0..n).map(|k| r[(k, k)].abs()).collect();
    let r11 = diag[0];
    let rnn = diag[n - 1];
    let condition = if rnn == 0.0 { f64::INFINITY } else { r11 / rnn };
    if r11 == 0.0 || diag.iter().any(|&rk| rk < tol * r11) {
        return Err(Error::RankDeficiency { condition });
    }
    let mut pb = b.clone();
    qr.p().permute_rows(&mut pb);
    let rt = r.transpose();
    let s = rt
        .solve_lower_triangular(&pb)
        .ok_or(Error::RankDeficiency { condition })?;
    Ok(Solve { x: q * s, condition })
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Number of singular values above `tol` times the largest.
pub fn numeric_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    let s = singular_values(a);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > tol * smax).count(),
        _ => 0,
    }
}
