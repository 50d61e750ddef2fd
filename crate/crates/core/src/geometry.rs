//! Candidate planes in reciprocal-exponent space and the simplex-weight
//! system that places a convex combination of ball points on a plane.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::linalg::{self, SINGULAR_CUTOFF};
use crate::problem::ReciprocalVector;

impl AsRef<[f64]> for ReciprocalVector {
    fn as_ref(&self) -> &[f64] {
        self.as_slice()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ZKind {
    /// Coordinates in `I` pinned at `1/q_i`.
    QFace,
    /// Coordinates in `I` pinned at `1/2`.
    HalfFace,
    /// `omega'` equal across the `q_i > 2` coordinates of `I`, the `q_i = 2`
    /// coordinates of `I` pinned at `1/2`.
    OmegaEqualizer,
}

impl fmt::Display for ZKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZKind::QFace => "QFace",
            ZKind::HalfFace => "HalfFace",
            ZKind::OmegaEqualizer => "OmegaEqualizer",
        })
    }
}

/// One affine equation `coeffs . x = rhs` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

impl AffineRow {
    pub fn pin(d: usize, i: usize, value: f64) -> Self {
        let mut coeffs = vec![0.0; d];
        coeffs[i] = 1.0;
        Self { coeffs, rhs: value }
    }

    /// `omega'_a(x) = omega'_b(x)` written linearly.
    pub fn omega_chain(d: usize, a: usize, b: usize, y: &[f64]) -> Self {
        let (sa, sb) = (1.0 / (0.5 - y[a]), 1.0 / (0.5 - y[b]));
        let mut coeffs = vec![0.0; d];
        coeffs[a] = sa;
        coeffs[b] = -sb;
        Self {
            coeffs,
            rhs: y[a] * sa - y[b] * sb,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() - self.rhs
    }
}

/// A plane of the admissible family with codimension `m - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateZ {
    pub kind: ZKind,
    /// Sorted 0-based coordinate indices.
    pub index_set: Vec<usize>,
    pub m: usize,
}

impl CandidateZ {
    /// `R^d` itself, the only `m = 1` plane.
    pub fn full_space() -> Self {
        Self {
            kind: ZKind::QFace,
            index_set: Vec::new(),
            m: 1,
        }
    }

    pub fn is_full_space(&self) -> bool {
        self.index_set.is_empty()
    }

    pub fn equations(&self, q: &[f64]) -> Vec<AffineRow> {
        let d = q.len();
        match self.kind {
            ZKind::QFace => self
                .index_set
                .iter()
                .map(|&i| AffineRow::pin(d, i, 1.0 / q[i]))
                .collect(),
            ZKind::HalfFace => self.index_set.iter().map(|&i| AffineRow::pin(d, i, 0.5)).collect(),
            ZKind::OmegaEqualizer => {
                let y: Vec<f64> = q.iter().map(|q| 1.0 / q).collect();
                let (wide, half): (Vec<usize>, Vec<usize>) = self.index_set.iter().partition(|&&i| q[i] > 2.0);
                let mut rows: Vec<AffineRow> = wide
                    .windows(2)
                    .map(|w| AffineRow::omega_chain(d, w[0], w[1], &y))
                    .collect();
                rows.extend(half.iter().map(|&i| AffineRow::pin(d, i, 0.5)));
                rows
            }
        }
    }

    /// Coordinates of `I` with `q_i > 2` (the ones carrying `omega'`).
    pub fn omega_coordinates(&self, q: &[f64]) -> Vec<usize> {
        match self.kind {
            ZKind::OmegaEqualizer => self.index_set.iter().copied().filter(|&i| q[i] > 2.0).collect(),
            _ => Vec::new(),
        }
    }

    /// Key identifying the plane as a point set; faces pinned at the same
    /// values compare equal regardless of kind.
    fn canonical_key(&self, q: &[f64]) -> (u8, Vec<(usize, u64)>) {
        match self.kind {
            ZKind::QFace | ZKind::HalfFace => (
                0,
                self.index_set
                    .iter()
                    .map(|&i| {
                        let v = if self.kind == ZKind::HalfFace { 0.5 } else { 1.0 / q[i] };
                        (i, v.to_bits())
                    })
                    .collect(),
            ),
            ZKind::OmegaEqualizer => (1, self.index_set.iter().map(|&i| (i, 0)).collect()),
        }
    }

    /// Total order used for deterministic tie breaking.
    pub fn sort_key(&self) -> (ZKind, &[usize]) {
        (self.kind, &self.index_set)
    }
}

impl fmt::Display for CandidateZ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_full_space() {
            return f.write_str("R^d");
        }
        write!(f, "{} I={:?}", self.kind, self.index_set)
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every plane of codimension `m - 1` in the admissible family, after
/// removing duplicates (a `q_i = 2` face is both a `1/q` and a `1/2` face).
pub fn enumerate_z(m: usize, q: &[f64], _tol: f64) -> Vec<CandidateZ> {
    let d = q.len();
    if m == 0 || m > d + 1 {
        return Vec::new();
    }
    if m == 1 {
        return vec![CandidateZ::full_space()];
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut push = |z: CandidateZ, out: &mut Vec<CandidateZ>| {
        if seen.insert(z.canonical_key(q)) {
            out.push(z);
        }
    };
    for kind in [ZKind::QFace, ZKind::HalfFace] {
        for index_set in combinations(d, m - 1) {
            push(CandidateZ { kind, index_set, m }, &mut out);
        }
    }
    if m <= d {
        for index_set in combinations(d, m) {
            if index_set.iter().filter(|&&i| q[i] > 2.0).count() >= 2 {
                push(
                    CandidateZ {
                        kind: ZKind::OmegaEqualizer,
                        index_set,
                        m,
                    },
                    &mut out,
                );
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason")]
pub enum Rejection {
    /// The weight system is (numerically) singular: the points' affine hull
    /// and the plane are not complementary, or the points are affinely
    /// dependent.
    Singular { hadamard_ratio: f64 },
    /// A weight is not strictly positive.
    NonPositiveWeight { index: usize, value: f64 },
    /// The shared `omega'` is outside the open interval `(0, 1)`.
    OmegaOutOfRange { value: f64 },
    /// Point count does not match `m`, or dimensions disagree.
    Arity { expected: usize, got: usize },
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Singular { hadamard_ratio } => {
                write!(f, "singular weight system (ratio {hadamard_ratio:.3e})")
            }
            Rejection::NonPositiveWeight { index, value } => {
                write!(f, "weight {index} = {value} is not positive")
            }
            Rejection::OmegaOutOfRange { value } => write!(f, "common omega' = {value} outside (0,1)"),
            Rejection::Arity { expected, got } => write!(f, "expected {expected} points, got {got}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub lambda: Vec<f64>,
    /// `sum_j lambda_j x_j`, the reciprocal of the interpolated exponents.
    pub theta_hat: Vec<f64>,
    pub omega_common: Option<f64>,
}

impl WeightSolution {
    /// Interpolated exponents `theta_i = 1/theta_hat_i` (`inf` at zero).
    pub fn theta(&self) -> Vec<f64> {
        self.theta_hat
            .iter()
            .map(|&x| if x == 0.0 { f64::INFINITY } else { 1.0 / x })
            .collect()
    }

    pub fn theta_hat_vector(&self) -> ReciprocalVector {
        ReciprocalVector::clamped(self.theta_hat.clone())
    }
}

/// The `m x m` system `{sum lambda = 1} + {row(sum lambda_j x_j) = rhs}`.
pub(crate) fn assemble_system<P: AsRef<[f64]>>(points: &[P], rows: &[AffineRow]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut a = Vec::with_capacity(rows.len() + 1);
    let mut b = Vec::with_capacity(rows.len() + 1);
    a.push(vec![1.0; points.len()]);
    b.push(1.0);
    for r in rows {
        a.push(
            points
                .iter()
                .map(|p| r.coeffs.iter().zip(p.as_ref()).map(|(c, x)| c * x).sum())
                .collect(),
        );
        b.push(r.rhs);
    }
    (a, b)
}

pub(crate) fn combine<P: AsRef<[f64]>>(points: &[P], lambda: &[f64]) -> Vec<f64> {
    let d = points[0].as_ref().len();
    let mut x = vec![0.0; d];
    for (p, &l) in points.iter().zip(lambda) {
        for (xi, pi) in x.iter_mut().zip(p.as_ref()) {
            *xi += l * pi;
        }
    }
    x
}

/// Solves for the weights placing `sum lambda_j x_j` on `z`, accepting only
/// a unique solution with all weights above `tol` (and, for an equalizer,
/// the shared `omega'` inside `(tol, 1 - tol)`).
pub fn solve_weights<P: AsRef<[f64]>>(
    points: &[P],
    z: &CandidateZ,
    q: &[f64],
    tol: f64,
) -> Result<WeightSolution, Rejection> {
    if points.len() != z.m {
        return Err(Rejection::Arity {
            expected: z.m,
            got: points.len(),
        });
    }
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != q.len()) {
        return Err(Rejection::Arity {
            expected: q.len(),
            got: p.as_ref().len(),
        });
    }
    let rows = z.equations(q);
    let (a, b) = assemble_system(points, &rows);
    let lambda = linalg::solve(&a, &b, SINGULAR_CUTOFF).map_err(|s| Rejection::Singular {
        hadamard_ratio: s.hadamard_ratio,
    })?;
    if let Some((index, &value)) = lambda.iter().enumerate().find(|(_, &l)| l.is_nan() || l <= tol) {
        return Err(Rejection::NonPositiveWeight { index, value });
    }
    let theta_hat: Vec<f64> = combine(points, &lambda)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let wide = z.omega_coordinates(q);
    let omega_common = if wide.is_empty() {
        None
    } else {
        let w = wide
            .iter()
            .map(|&i| (theta_hat[i] - 1.0 / q[i]) / (0.5 - 1.0 / q[i]))
            .sum::<f64>()
            / wide.len() as f64;
        if !(w > tol && w < 1.0 - tol) {
            return Err(Rejection::OmegaOutOfRange { value: w });
        }
        Some(w)
    };
    Ok(WeightSolution {
        lambda,
        theta_hat,
        omega_common,
    })
}

/// Whether the points are affinely independent: the differences from the
/// first point have smallest singular value above `tol * max(largest, 1)`.
pub fn affinely_independent<P: AsRef<[f64]>>(points: &[P], tol: f64) -> bool {
    if points.len() <= 1 {
        return true;
    }
    let base = points[0].as_ref();
    let diffs: Vec<Vec<f64>> = points[1..]
        .iter()
        .map(|p| p.as_ref().iter().zip(base).map(|(a, b)| a - b).collect())
        .collect();
    linalg::full_row_rank(&diffs, tol)
}
