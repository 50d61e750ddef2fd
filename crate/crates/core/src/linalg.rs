//! Small dense linear algebra: Gaussian elimination with a scale-free
//! singularity cutoff, and SVD-based rank predicates.

use nalgebra::DMatrix;

/// Relative cutoff on `|det A| / prod_i ||row_i||` below which a system is
/// treated as singular.
pub const SINGULAR_CUTOFF: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular {
    /// `|det A| / prod_i ||row_i||`, in `[0, 1]` by Hadamard's inequality.
    pub hadamard_ratio: f64,
}

/// Ratio `|det A| / prod ||row_i||_2`; zero if some row vanishes.
pub fn hadamard_ratio(rows: &[Vec<f64>]) -> f64 {
    let norm_prod: f64 = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .product();
    if norm_prod == 0.0 {
        return 0.0;
    }
    match lu_solve(rows.to_vec(), vec![0.0; rows.len()]) {
        Some((_, det)) => (det.abs() / norm_prod).min(1.0),
        None => 0.0,
    }
}

/// Solves the square system `A x = b`, rejecting nearly singular `A`.
pub fn solve(rows: &[Vec<f64>], rhs: &[f64], cutoff: f64) -> Result<Vec<f64>, Singular> {
    let n = rows.len();
    debug_assert!(rows.iter().all(|r| r.len() == n) && rhs.len() == n);
    let norm_prod: f64 = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .product();
    if norm_prod == 0.0 || !norm_prod.is_finite() {
        return Err(Singular { hadamard_ratio: 0.0 });
    }
    match lu_solve(rows.to_vec(), rhs.to_vec()) {
        Some((x, det)) => {
            let ratio = (det.abs() / norm_prod).min(1.0);
            if ratio < cutoff {
                Err(Singular { hadamard_ratio: ratio })
            } else {
                Ok(x)
            }
        }
        None => Err(Singular { hadamard_ratio: 0.0 }),
    }
}

// Partial pivoting; returns None on an exactly zero pivot.
fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<(Vec<f64>, f64)> {
    let n = a.len();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col] == 0.0 {
            return None;
        }
        if pivot != col {
            a.swap(pivot, col);
            b.swap(pivot, col);
            det = -det;
        }
        let p = a[col][col];
        det *= p;
        for row in col + 1..n {
            let f = a[row][col] / p;
            if f != 0.0 {
                let (top, rest) = a.split_at_mut(row);
                for (x, &y) in rest[0][col..n].iter_mut().zip(&top[col][col..n]) {
                    *x -= f * y;
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some((x, det))
}

/// Singular values of the matrix with the given rows, descending.
pub fn singular_values(rows: &[Vec<f64>]) -> Vec<f64> {
    if rows.is_empty() || rows[0].is_empty() {
        return Vec::new();
    }
    let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Whether the rows are linearly independent: smallest singular value
/// exceeds `tol * max(largest, 1)`.
pub fn full_row_rank(rows: &[Vec<f64>], tol: f64) -> bool {
    if rows.is_empty() {
        return true;
    }
    let cols = rows[0].len();
    if rows.len() > cols {
        return false;
    }
    let sv = singular_values(rows);
    let largest = sv.first().copied().unwrap_or(0.0).max(1.0);
    sv.len() == rows.len() && sv.last().copied().unwrap_or(0.0) > tol * largest
}

/// Numerical rank with the same relative threshold as [`full_row_rank`].
pub fn rank(rows: &[Vec<f64>], tol: f64) -> usize {
    let sv = singular_values(rows);
    let largest = sv.first().copied().unwrap_or(0.0).max(1.0);
    sv.iter().filter(|&&s| s > tol * largest).count()
}
