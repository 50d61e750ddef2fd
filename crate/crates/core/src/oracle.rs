//! Brute-force references for the structured minimum: a simplex grid, an
//! exact enumeration of the objective's arrangement vertices, and a
//! randomized cross-check of the two `Phi` evaluators.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, combinations, AffineRow};
use crate::phi::{breakpoints, build_context, log_phi, phi, phi_piecewise, PhiError, Target, OMEGA_TOL};
use crate::problem::{ProblemError, ProblemSpec, ReciprocalVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("grid has {points} points, cap is {max_points}")]
    CapacityError { points: u128, max_points: u64 },
    #[error("grid resolution r = {0} must be >= 2")]
    InvalidGrid(u32),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Phi(#[from] PhiError),
}

/// The simplex grid `{0, 1/r, ..., 1}^{#A}` with coordinates summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub r: u32,
    pub max_points: u64,
}

impl GridSpec {
    pub const DEFAULT_MAX_POINTS: u64 = 50_000_000;

    pub fn new(r: u32) -> Result<Self, OracleError> {
        Self::with_cap(r, Self::DEFAULT_MAX_POINTS)
    }

    pub fn with_cap(r: u32, max_points: u64) -> Result<Self, OracleError> {
        if r < 2 {
            return Err(OracleError::InvalidGrid(r));
        }
        Ok(Self { r, max_points })
    }

    pub fn step(&self) -> f64 {
        1.0 / self.r as f64
    }

    /// `C(r + balls - 1, balls - 1)`, saturating.
    pub fn point_count(&self, balls: usize) -> u128 {
        let r = self.r as u128;
        let mut c: u128 = 1;
        for i in 1..balls as u128 {
            c = match c.checked_mul(r + i) {
                Some(v) => v / i,
                None => return u128::MAX,
            };
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMin {
    pub log_value: f64,
    pub weights: Vec<f64>,
    pub error_bound: f64,
    pub lipschitz: f64,
    pub points: u128,
}

/// `Sum lambda_j log nu_j + log Phi(Sum lambda_j x_j)` over all balls.
pub fn simplex_objective(problem: &ProblemSpec, target: &Target, lambda: &[f64]) -> f64 {
    let points: Vec<&[f64]> = problem.balls.iter().map(|b| b.p.as_slice()).collect();
    let x: Vec<f64> = geometry::combine(&points, lambda)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let weighted: f64 = problem.balls.iter().zip(lambda).map(|(b, &l)| l * b.log_nu()).sum();
    weighted + log_phi(&x, target)
}

/// Lipschitz constant of the simplex objective in the l1 norm of `lambda`,
/// scaled by the number of balls.
pub fn lipschitz_constant(problem: &ProblemSpec) -> f64 {
    let max_log_nu = problem.balls.iter().map(|b| b.log_nu().abs()).fold(0.0, f64::max);
    let phi_slope: f64 = problem.k.iter().map(|&k| (k.max(2) as f64).ln()).sum::<f64>() + 0.5 * (problem.n as f64).ln();
    problem.balls.len() as f64 * (2.0 * max_log_nu + phi_slope)
}

// Compositions of `total` into `parts` nonnegative parts, lexicographic.
fn for_each_composition(total: u32, parts: usize, f: &mut impl FnMut(&[u32])) {
    fn rec(rest: u32, buf: &mut Vec<u32>, parts: usize, f: &mut impl FnMut(&[u32])) {
        if buf.len() + 1 == parts {
            buf.push(rest);
            f(buf);
            buf.pop();
            return;
        }
        for c in 0..=rest {
            buf.push(c);
            rec(rest - c, buf, parts, f);
            buf.pop();
        }
    }
    rec(total, &mut Vec::with_capacity(parts), parts, f);
}

pub fn grid_min(problem: &ProblemSpec, grid: &GridSpec) -> Result<GridMin, OracleError> {
    problem.check()?;
    if grid.r < 2 {
        return Err(OracleError::InvalidGrid(grid.r));
    }
    let balls = problem.balls.len();
    let points = grid.point_count(balls);
    if points > grid.max_points as u128 {
        return Err(OracleError::CapacityError {
            points,
            max_points: grid.max_points,
        });
    }
    let target = Target::from_problem(problem)?;
    let r = grid.r;
    let rf = r as f64;

    let best_with_first = |first: u32| -> (f64, Vec<u32>) {
        let mut best = (f64::INFINITY, Vec::new());
        let mut lambda = vec![0.0; balls];
        let mut eval = |counts: &[u32]| {
            for (l, &c) in lambda.iter_mut().zip(counts) {
                *l = c as f64 / rf;
            }
            let v = simplex_objective(problem, &target, &lambda);
            if v < best.0 {
                best = (v, counts.to_vec());
            }
        };
        if balls == 1 {
            eval(&[r]);
        } else {
            for_each_composition(r - first, balls - 1, &mut |rest| {
                let mut counts = Vec::with_capacity(balls);
                counts.push(first);
                counts.extend_from_slice(rest);
                eval(&counts);
            });
        }
        best
    };
    let firsts: Vec<u32> = if balls == 1 { vec![r] } else { (0..=r).collect() };
    let partial: Vec<(f64, Vec<u32>)> = firsts.par_iter().map(|&f| best_with_first(f)).collect();
    // Strict improvement keeps the lexicographically first minimizer.
    let (log_value, counts) =
        partial.into_iter().fold(
            (f64::INFINITY, Vec::new()),
            |acc, cur| {
                if cur.0 < acc.0 {
                    cur
                } else {
                    acc
                }
            },
        );
    let lipschitz = lipschitz_constant(problem);
    Ok(GridMin {
        log_value,
        weights: counts.iter().map(|&c| c as f64 / rf).collect(),
        error_bound: lipschitz * grid.step(),
        lipschitz,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexMin {
    pub log_value: f64,
    pub weights: Vec<f64>,
    pub vertex_count: usize,
}

/// Hyperplanes in `x`-space across which `log Phi` changes its affine
/// pieces: `x_i = 1/q_i`, `x_i = 1/2`, and `omega'_a = omega'_b`.
pub fn breakpoint_hyperplanes(q: &[f64]) -> Vec<AffineRow> {
    let d = q.len();
    let y: Vec<f64> = q.iter().map(|q| 1.0 / q).collect();
    let mut rows = Vec::new();
    for i in 0..d {
        rows.push(AffineRow::pin(d, i, y[i]));
        if q[i] > 2.0 {
            rows.push(AffineRow::pin(d, i, 0.5));
        }
    }
    for a in 0..d {
        for b in a + 1..d {
            if q[a] > 2.0 && q[b] > 2.0 {
                rows.push(AffineRow::omega_chain(d, a, b, &y));
            }
        }
    }
    rows
}

/// Exact minimum of the simplex objective over the closed simplex.
///
/// On every cell of the arrangement of [`breakpoint_hyperplanes`] pulled
/// back to the simplex, the objective is a minimum of affine functions, so
/// the minimum sits at a vertex. Vertices are enumerated by support and
/// by choosing `|support| - 1` hyperplanes.
pub fn vertex_min(problem: &ProblemSpec, tol: f64) -> Result<VertexMin, OracleError> {
    problem.check()?;
    let target = Target::from_problem(problem)?;
    let hyperplanes = breakpoint_hyperplanes(&problem.q);
    let balls = problem.balls.len();
    let mut best = VertexMin {
        log_value: f64::INFINITY,
        weights: Vec::new(),
        vertex_count: 0,
    };
    for m in 1..=balls.min(hyperplanes.len() + 1) {
        for support in combinations(balls, m) {
            let points: Vec<&[f64]> = support.iter().map(|&a| problem.balls[a].p.as_slice()).collect();
            for chosen in combinations(hyperplanes.len(), m - 1) {
                let rows: Vec<AffineRow> = chosen.iter().map(|&h| hyperplanes[h].clone()).collect();
                let (a, b) = geometry::assemble_system(&points, &rows);
                let mat = DMatrix::from_fn(m, m, |i, j| a[i][j]);
                let Some(sol) = mat.lu().solve(&DVector::from_vec(b)) else {
                    continue;
                };
                if sol.iter().any(|v| !v.is_finite() || *v < -tol) {
                    continue;
                }
                let clipped: Vec<f64> = sol.iter().map(|v| v.max(0.0)).collect();
                let total: f64 = clipped.iter().sum();
                let mut lambda = vec![0.0; balls];
                for (&a, &l) in support.iter().zip(&clipped) {
                    lambda[a] = l / total;
                }
                let v = simplex_objective(problem, &target, &lambda);
                best.vertex_count += 1;
                if v < best.log_value {
                    best.log_value = v;
                    best.weights = lambda;
                }
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiCheckFailure {
    pub q: Vec<f64>,
    pub k: Vec<u64>,
    pub n: u64,
    /// Reciprocal exponents `1/p_i`.
    pub x: Vec<f64>,
    pub log_phi: f64,
    pub log_phi_piecewise: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiCheckReport {
    pub sample_count: usize,
    pub max_dim: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_difference: f64,
    pub failures: Vec<PhiCheckFailure>,
}

/// A random `(target, x)` pair: `k_i <= 2^12`, some `q_i = 2`, exponents
/// frequently on `{1, 2, q_i, inf}`, and `n` drawn log-uniformly or next to
/// a breakpoint.
pub fn sample_phi_instance<R: Rng>(rng: &mut R, max_dim: usize) -> (Target, ReciprocalVector) {
    let d = rng.gen_range(1..=max_dim.max(1));
    let (k, q) = loop {
        let k: Vec<u64> = (0..d).map(|_| rng.gen_range(1..=4096)).collect();
        if k.iter().map(|&k| k as f64).product::<f64>() >= 2.0 {
            let q: Vec<f64> = (0..d)
                .map(|_| {
                    if rng.gen_bool(0.25) {
                        2.0
                    } else {
                        2.0 + rng.gen_range(0.0f64..3.0).exp() - 1.0 + 1e-3
                    }
                })
                .collect();
            break (k, q);
        }
    };
    let x: Vec<f64> = q
        .iter()
        .map(|&qi| {
            if rng.gen_bool(0.5) {
                *[1.0, 0.5, 1.0 / qi, 0.0].choose(rng).expect("nonempty")
            } else {
                rng.gen_range(0.0..=1.0)
            }
        })
        .collect();
    let x = ReciprocalVector::new(x).expect("sampled in [0,1]");
    let max_n = (k.iter().fold(1u128, |a, &k| a * k as u128) / 2).min(u64::MAX as u128) as u64;
    let log_max = (max_n as f64).ln();
    let n = if rng.gen_bool(0.4) {
        let probe = Target::new(&q, &k, 1).expect("valid target");
        let ctx = build_context(&x, &q, OMEGA_TOL);
        let bps = breakpoints(&ctx, &probe);
        let (_, b) = *bps.choose(rng).expect("at least one breakpoint");
        let center = b.min(log_max).exp().round() as i64;
        (center + rng.gen_range(-1..=1)).clamp(1, max_n as i64) as u64
    } else {
        (rng.gen_range(0.0..=log_max).exp().round() as u64).clamp(1, max_n)
    };
    (Target::new(&q, &k, n).expect("valid target"), x)
}

/// Compares the min-form and piecewise evaluators on random instances.
pub fn exhaustive_phi_check(sample_count: usize, max_dim: usize, seed: u64) -> PhiCheckReport {
    const TOLERANCE: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PhiCheckReport {
        sample_count,
        max_dim,
        seed,
        tolerance: TOLERANCE,
        max_difference: 0.0,
        failures: Vec::new(),
    };
    for _ in 0..sample_count {
        let (target, x) = sample_phi_instance(&mut rng, max_dim);
        let a = phi(&x, &target).expect("dimensions match").log();
        let b = phi_piecewise(&x, &target).expect("dimensions match").log();
        let diff = (a - b).abs();
        report.max_difference = report.max_difference.max(diff);
        if diff.is_nan() || diff > TOLERANCE {
            report.failures.push(PhiCheckFailure {
                q: target.q().to_vec(),
                k: target.k().to_vec(),
                n: target.n(),
                x: x.as_slice().to_vec(),
                log_phi: a,
                log_phi_piecewise: b,
                difference: diff,
            });
        }
    }
    report
}
