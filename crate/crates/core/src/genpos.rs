//! General-position predicates for a ball family and random small
//! perturbations that establish them.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{estimate, EstimateError};
use crate::geometry::{assemble_system, combinations, AffineRow};
use crate::linalg::{full_row_rank, hadamard_ratio, SINGULAR_CUTOFF};
use crate::problem::{ProblemError, ProblemSpec, ReciprocalVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenPosError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("full predicate-3 check needs {needed} evaluations, budget is {budget}")]
    CapacityError { needed: u128, budget: u64 },
    #[error("no general-position configuration after {nudges} nudges; last violation: {last_violation}")]
    RetryExhausted { nudges: usize, last_violation: String },
    #[error("epsilon = {0} must be positive and finite")]
    InvalidEpsilon(f64),
}

/// How much of the predicate-3 matrix family is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum Scope {
    /// Every matrix, subject to `budget` evaluations.
    Full { budget: u64 },
    /// `per_index_set` random matrices for each index set.
    Sampled { per_index_set: usize, seed: u64 },
}

impl Scope {
    pub const DEFAULT_BUDGET: u64 = 20_000_000;

    pub fn full() -> Self {
        Scope::Full {
            budget: Self::DEFAULT_BUDGET,
        }
    }
}

/// An affine plane `x_i = 1/2 (i in halves)`, `x_i = 1/q_i (i in q_pins)`,
/// and `omega'` equal across each block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedPlane {
    pub halves: Vec<usize>,
    pub q_pins: Vec<usize>,
    pub blocks: Vec<Vec<usize>>,
}

impl MixedPlane {
    pub fn codim(&self) -> usize {
        self.halves.len() + self.q_pins.len() + self.blocks.iter().map(|b| b.len() - 1).sum::<usize>()
    }

    pub fn index_set(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .halves
            .iter()
            .chain(&self.q_pins)
            .chain(self.blocks.iter().flatten())
            .copied()
            .collect();
        all.sort_unstable();
        all
    }

    pub fn rows(&self, q: &[f64]) -> Vec<AffineRow> {
        let d = q.len();
        let y: Vec<f64> = q.iter().map(|q| 1.0 / q).collect();
        let mut rows: Vec<AffineRow> = self.halves.iter().map(|&i| AffineRow::pin(d, i, 0.5)).collect();
        rows.extend(self.q_pins.iter().map(|&i| AffineRow::pin(d, i, y[i])));
        for b in &self.blocks {
            for &j in &b[1..] {
                rows.push(AffineRow::omega_chain(d, b[0], j, &y));
            }
        }
        rows
    }
}

impl fmt::Display for MixedPlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        parts.extend(self.halves.iter().map(|i| format!("x{i}=1/2")));
        parts.extend(self.q_pins.iter().map(|i| format!("x{i}=1/q{i}")));
        for b in &self.blocks {
            let names: Vec<String> = b.iter().map(|i| format!("w'{i}")).collect();
            parts.push(names.join("="));
        }
        write!(f, "{{{}}}", parts.join(", "))
    }
}

#[derive(Clone, Copy)]
enum Label {
    Free,
    Half,
    QPin,
    Block(usize),
}

/// Every plane of the given codimension. For `q_i = 2` the two pins
/// coincide and only the `1/q_i` pin is produced; blocks use `q_i > 2` only.
pub fn mixed_planes(q: &[f64], codim: usize) -> Vec<MixedPlane> {
    fn rec(i: usize, q: &[f64], labels: &mut Vec<Label>, blocks: usize, out: &mut Vec<Vec<Label>>) {
        if i == q.len() {
            out.push(labels.clone());
            return;
        }
        let mut opts = vec![Label::Free, Label::QPin];
        if q[i] > 2.0 {
            opts.push(Label::Half);
            opts.extend((0..=blocks).map(Label::Block));
        }
        for l in opts {
            labels.push(l);
            let nb = match l {
                Label::Block(b) if b == blocks => blocks + 1,
                _ => blocks,
            };
            rec(i + 1, q, labels, nb, out);
            labels.pop();
        }
    }
    let mut raw = Vec::new();
    rec(0, q, &mut Vec::new(), 0, &mut raw);
    raw.into_iter()
        .filter_map(|labels| {
            let mut plane = MixedPlane {
                halves: Vec::new(),
                q_pins: Vec::new(),
                blocks: Vec::new(),
            };
            for (i, l) in labels.into_iter().enumerate() {
                match l {
                    Label::Free => {}
                    Label::Half => plane.halves.push(i),
                    Label::QPin => plane.q_pins.push(i),
                    Label::Block(b) => {
                        if plane.blocks.len() <= b {
                            plane.blocks.resize(b + 1, Vec::new());
                        }
                        plane.blocks[b].push(i);
                    }
                }
            }
            (plane.blocks.iter().all(|b| b.len() >= 2) && plane.codim() == codim).then_some(plane)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate1Violation {
    pub index_set: Vec<usize>,
    pub balls: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate2Failure {
    /// The ball hull and the plane are not complementary.
    NotComplementary,
    /// Fewer balls than the plane's `m` have a hull meeting the plane.
    HullMeetsPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate2Violation {
    pub plane: MixedPlane,
    pub balls: Vec<usize>,
    pub failure: Predicate2Failure,
}

/// One row of a predicate-3 matrix: pivot `i_*` and the set `T_1`; the
/// remaining coordinates form `T_2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotRow {
    pub pivot: usize,
    pub t1: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate3Violation {
    pub index_set: Vec<usize>,
    pub balls: Vec<usize>,
    pub rows: Vec<PivotRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenPosReport {
    pub predicate1_violations: Vec<Predicate1Violation>,
    pub predicate2_violations: Vec<Predicate2Violation>,
    pub predicate3_checked: bool,
    pub predicate3_scope: Scope,
    pub predicate3_violations: Vec<Predicate3Violation>,
    pub is_general_position: bool,
}

impl GenPosReport {
    /// Human-readable description of the first violation, if any.
    pub fn first_violation(&self) -> Option<String> {
        if let Some(v) = self.predicate1_violations.first() {
            return Some(format!(
                "predicate 1: balls {:?} affinely dependent on coordinates {:?}",
                v.balls, v.index_set
            ));
        }
        if let Some(v) = self.predicate2_violations.first() {
            return Some(format!(
                "predicate 2: balls {:?} vs plane {} ({:?})",
                v.balls, v.plane, v.failure
            ));
        }
        self.predicate3_violations.first().map(|v| {
            format!(
                "predicate 3: balls {:?} on coordinates {:?}, rows {:?}",
                v.balls, v.index_set, v.rows
            )
        })
    }
}

fn points<'a>(problem: &'a ProblemSpec, balls: &[usize]) -> Vec<&'a [f64]> {
    balls.iter().map(|&a| problem.balls[a].p.as_slice()).collect()
}

fn predicate1(problem: &ProblemSpec, tol: f64) -> Vec<Predicate1Violation> {
    let d = problem.dim();
    let count = problem.balls.len();
    let mut out = Vec::new();
    for m in 2..=(d + 1).min(count) {
        for index_set in combinations(d, m - 1) {
            for balls in combinations(count, m) {
                let diffs: Vec<Vec<f64>> = balls[1..]
                    .iter()
                    .map(|&b| {
                        index_set
                            .iter()
                            .map(|&i| problem.balls[b].p[i] - problem.balls[balls[0]].p[i])
                            .collect()
                    })
                    .collect();
                if !full_row_rank(&diffs, tol) {
                    out.push(Predicate1Violation {
                        index_set: index_set.clone(),
                        balls,
                    });
                }
            }
        }
    }
    out
}

// Whether conv of the points meets the plane: a least-squares solution of
// the weight system that is consistent and nonnegative. A rank-deficient
// system is reported as meeting the plane.
fn hull_meets_plane(pts: &[&[f64]], rows: &[AffineRow], tol: f64) -> bool {
    let (a, b) = assemble_system(pts, rows);
    let (r, c) = (a.len(), pts.len());
    let mat = DMatrix::from_fn(r, c, |i, j| a[i][j]);
    let rhs = DVector::from_vec(b);
    let sv = mat.clone().svd(true, true);
    let largest = sv.singular_values.max().max(1.0);
    if sv.singular_values.min() <= tol * largest {
        return true;
    }
    let Ok(lambda) = sv.solve(&rhs, tol * largest) else {
        return true;
    };
    let residual = (&mat * &lambda - &rhs).amax();
    let scale = mat.amax().max(rhs.amax()).max(1.0);
    residual <= tol * scale && lambda.iter().all(|&l| l >= -tol)
}

fn predicate2(problem: &ProblemSpec, tol: f64) -> Vec<Predicate2Violation> {
    let d = problem.dim();
    let count = problem.balls.len();
    let mut out = Vec::new();
    for codim in 1..=d {
        let m = codim + 1;
        for plane in mixed_planes(&problem.q, codim) {
            let rows = plane.rows(&problem.q);
            if m <= count {
                for balls in combinations(count, m) {
                    let (a, _) = assemble_system(&points(problem, &balls), &rows);
                    if hadamard_ratio(&a) < SINGULAR_CUTOFF {
                        out.push(Predicate2Violation {
                            plane: plane.clone(),
                            balls,
                            failure: Predicate2Failure::NotComplementary,
                        });
                    }
                }
            }
            for k in 1..m.min(count + 1) {
                for balls in combinations(count, k) {
                    if hull_meets_plane(&points(problem, &balls), &rows, tol) {
                        out.push(Predicate2Violation {
                            plane: plane.clone(),
                            balls,
                            failure: Predicate2Failure::HullMeetsPlane,
                        });
                    }
                }
            }
        }
    }
    out
}

fn pivot_rows(q: &[f64], index_set: &[usize]) -> Vec<PivotRow> {
    let d = q.len();
    let mut out = Vec::new();
    for &pivot in index_set.iter().filter(|&&i| q[i] > 2.0) {
        let others: Vec<usize> = (0..d).filter(|&i| i != pivot).collect();
        for mask in 0u64..(1 << others.len()) {
            let t1 = others
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, &i)| i)
                .collect();
            out.push(PivotRow { pivot, t1 });
        }
    }
    out
}

// log A_{j,i} over the index set for one pivot row.
fn log_a_row(problem: &ProblemSpec, row: &PivotRow, index_set: &[usize]) -> Vec<f64> {
    let lk: Vec<f64> = problem.k.iter().map(|&k| (k as f64).ln()).collect();
    let y: Vec<f64> = problem.q.iter().map(|q| 1.0 / q).collect();
    let in_t1 = |i: usize| row.t1.contains(&i);
    let p = row.pivot;
    let t2_sum: f64 = (0..problem.dim())
        .filter(|&i| i != p && !in_t1(i))
        .map(|i| y[i] * lk[i])
        .sum();
    let t1_sum: f64 = row.t1.iter().map(|&i| 0.5 * lk[i]).sum();
    let pivot_log = (0.5 * (problem.n as f64).ln() - t1_sum - y[p] * lk[p] - t2_sum) / (0.5 - y[p]);
    index_set
        .iter()
        .map(|&i| {
            if i == p {
                pivot_log
            } else if in_t1(i) {
                lk[i]
            } else {
                0.0
            }
        })
        .collect()
}

fn predicate3_failure(
    problem: &ProblemSpec,
    index_set: &[usize],
    balls: &[usize],
    log_a: &[Vec<f64>],
    tol: f64,
) -> bool {
    let b: Vec<Vec<f64>> = log_a[1..]
        .iter()
        .map(|r| r.iter().zip(&log_a[0]).map(|(a, a1)| a - a1).collect())
        .collect();
    if !full_row_rank(&b, tol) {
        return false;
    }
    let base = &problem.balls[balls[0]].p;
    let v: Vec<Vec<f64>> = balls[1..]
        .iter()
        .map(|&k| index_set.iter().map(|&i| problem.balls[k].p[i] - base[i]).collect())
        .collect();
    let g: Vec<Vec<f64>> = v
        .iter()
        .map(|vr| b.iter().map(|br| vr.iter().zip(br).map(|(x, y)| x * y).sum()).collect())
        .collect();
    !full_row_rank(&g, tol)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k as u128).fold(1u128, |acc, i| acc.saturating_mul(n as u128 - i) / (i + 1))
}

fn predicate3(problem: &ProblemSpec, tol: f64, scope: Scope) -> Result<Vec<Predicate3Violation>, GenPosError> {
    let d = problem.dim();
    let count = problem.balls.len();
    let mut jobs = Vec::new();
    let mut needed: u128 = 0;
    for m in 2..=d.min(count) {
        for index_set in combinations(d, m) {
            let rows = pivot_rows(&problem.q, &index_set);
            needed = needed.saturating_add(binomial(rows.len(), m).saturating_mul(binomial(count, m)));
            jobs.push((m, index_set, rows));
        }
    }
    let mut rng = match scope {
        Scope::Full { budget } => {
            if needed > budget as u128 {
                return Err(GenPosError::CapacityError { needed, budget });
            }
            None
        }
        Scope::Sampled { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut tasks = Vec::new();
    for (m, index_set, rows) in jobs {
        let row_sets: Vec<Vec<usize>> = match (&mut rng, scope) {
            (Some(rng), Scope::Sampled { per_index_set, .. }) => {
                let mut picked: Vec<Vec<usize>> = (0..per_index_set)
                    .filter(|_| rows.len() >= m)
                    .map(|_| {
                        let mut s = rand::seq::index::sample(rng, rows.len(), m).into_vec();
                        s.sort_unstable();
                        s
                    })
                    .collect();
                picked.sort();
                picked.dedup();
                picked
            }
            _ => combinations(rows.len(), m),
        };
        for balls in combinations(count, m) {
            tasks.push((index_set.clone(), balls, rows.clone(), row_sets.clone()));
        }
    }
    let found: Vec<Vec<Predicate3Violation>> = tasks
        .par_iter()
        .map(|(index_set, balls, rows, row_sets)| {
            let log_a: Vec<Vec<f64>> = rows.iter().map(|r| log_a_row(problem, r, index_set)).collect();
            row_sets
                .iter()
                .filter(|set| {
                    let chosen: Vec<Vec<f64>> = set.iter().map(|&r| log_a[r].clone()).collect();
                    predicate3_failure(problem, index_set, balls, &chosen, tol)
                })
                .map(|set| Predicate3Violation {
                    index_set: index_set.clone(),
                    balls: balls.clone(),
                    rows: set.iter().map(|&r| rows[r].clone()).collect(),
                })
                .collect()
        })
        .collect();
    Ok(found.into_iter().flatten().collect())
}

pub fn check_general_position(problem: &ProblemSpec, tol: f64, scope: Scope) -> Result<GenPosReport, GenPosError> {
    problem.check()?;
    let predicate1_violations = predicate1(problem, tol);
    let predicate2_violations = predicate2(problem, tol);
    let predicate3_violations = predicate3(problem, tol, scope)?;
    let is_general_position =
        predicate1_violations.is_empty() && predicate2_violations.is_empty() && predicate3_violations.is_empty();
    Ok(GenPosReport {
        predicate1_violations,
        predicate2_violations,
        predicate3_checked: true,
        predicate3_scope: scope,
        predicate3_violations,
        is_general_position,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbOptions {
    pub epsilon: f64,
    pub seed: u64,
    pub tol: f64,
    pub scope: Scope,
    pub max_nudges: usize,
}

impl PerturbOptions {
    pub fn new(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            seed,
            tol: crate::problem::DEFAULT_TOL,
            scope: Scope::full(),
            max_nudges: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbOutcome {
    pub problem: ProblemSpec,
    pub nudges: usize,
    pub report: GenPosReport,
}

// A ball and the coordinates implicated by the first violation.
fn implicated<R: Rng>(report: &GenPosReport, rng: &mut R) -> Option<(usize, Vec<usize>)> {
    let (balls, coords) = if let Some(v) = report.predicate1_violations.first() {
        (v.balls.clone(), v.index_set.clone())
    } else if let Some(v) = report.predicate2_violations.first() {
        (v.balls.clone(), v.plane.index_set())
    } else {
        let v = report.predicate3_violations.first()?;
        (v.balls.clone(), v.index_set.clone())
    };
    Some((*balls.choose(rng).expect("violations name balls"), coords))
}

/// Nudges one point at a time until the family is in general position.
/// Every coordinate stays within `epsilon` of the input.
pub fn perturb_with(problem: &ProblemSpec, opts: &PerturbOptions) -> Result<PerturbOutcome, GenPosError> {
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(GenPosError::InvalidEpsilon(opts.epsilon));
    }
    problem.check()?;
    let original: Vec<Vec<f64>> = problem.balls.iter().map(|b| b.p.as_slice().to_vec()).collect();
    let mut current = problem.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for nudges in 0..=opts.max_nudges {
        let report = check_general_position(&current, opts.tol, opts.scope)?;
        let Some((ball, coords)) = implicated(&report, &mut rng) else {
            return Ok(PerturbOutcome {
                problem: current,
                nudges,
                report,
            });
        };
        if nudges == opts.max_nudges {
            return Err(GenPosError::RetryExhausted {
                nudges,
                last_violation: report.first_violation().unwrap_or_default(),
            });
        }
        let mut x = current.balls[ball].p.as_slice().to_vec();
        for i in coords {
            let shift = opts.epsilon * rng.gen_range(-1.0..=1.0);
            let o = original[ball][i];
            let mut v = o + shift;
            if !(0.0..=1.0).contains(&v) {
                v = o - shift;
            }
            x[i] = v.clamp(0.0, 1.0);
        }
        current.balls[ball].p = ReciprocalVector::new(x).expect("clamped to [0,1]");
    }
    unreachable!("the loop returns on its last iteration")
}

pub fn perturb(problem: &ProblemSpec, epsilon: f64, seed: u64) -> Result<ProblemSpec, GenPosError> {
    perturb_with(problem, &PerturbOptions::new(epsilon, seed)).map(|o| o.problem)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub epsilon: f64,
    pub log_delta: f64,
    pub perturbed_log_value: f64,
}

/// `|log Psi(perturbed) - log Psi(input)|` for each epsilon.
pub fn stability_probe(problem: &ProblemSpec, epsilons: &[f64], seed: u64) -> Result<Vec<StabilityRow>, GenPosError> {
    stability_probe_with(problem, epsilons, &PerturbOptions::new(1.0, seed))
}

/// As [`stability_probe`], with `opts.epsilon` replaced by each entry.
pub fn stability_probe_with(
    problem: &ProblemSpec,
    epsilons: &[f64],
    opts: &PerturbOptions,
) -> Result<Vec<StabilityRow>, GenPosError> {
    let base = estimate(problem, opts.tol)?.log_value.log();
    epsilons
        .iter()
        .map(|&epsilon| {
            if epsilon == 0.0 {
                return Ok(StabilityRow {
                    epsilon,
                    log_delta: 0.0,
                    perturbed_log_value: base,
                });
            }
            let perturbed = perturb_with(problem, &PerturbOptions { epsilon, ..*opts })?.problem;
            let v = estimate(&perturbed, opts.tol)?.log_value.log();
            Ok(StabilityRow {
                epsilon,
                log_delta: (v - base).abs(),
                perturbed_log_value: v,
            })
        })
        .collect()
}
