//! The structured minimum
//! `min_m min_{alpha, Z} nu_{alpha_1}^{lambda_1} ... nu_{alpha_m}^{lambda_m} Phi(theta(alpha, Z))`
//! over ball subsets and admissible planes, with its minimizing certificate.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, combinations, enumerate_z, CandidateZ, Rejection, WeightSolution};
use crate::logvalue::LogValue;
use crate::phi::{log_phi, PhiError, Target};
use crate::problem::{ProblemError, ProblemSpec, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Phi(#[from] PhiError),
    #[error("value out of range: {0}")]
    RangeError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub m: usize,
    /// Sorted indices into the problem's ball list.
    pub ball_indices: Vec<usize>,
    pub z: CandidateZ,
    pub weights: WeightSolution,
    pub log_value: LogValue,
}

impl Certificate {
    fn order(&self, other: &Self) -> Ordering {
        self.log_value
            .total_cmp(&other.log_value)
            .then(self.m.cmp(&other.m))
            .then_with(|| self.ball_indices.cmp(&other.ball_indices))
            .then_with(|| self.z.sort_key().cmp(&other.z.sort_key()))
    }

    /// Recomputes `sum lambda_j log nu_j + log Phi(theta)` from scratch.
    pub fn recompute(&self, problem: &ProblemSpec) -> Result<LogValue, EstimateError> {
        upper_bound_value(problem, &self.ball_indices, &self.weights.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub ball_indices: Vec<usize>,
    pub z: CandidateZ,
    pub rejection: Rejection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub log_value: LogValue,
    pub winner: Certificate,
    /// Other accepted candidates within `runner_up_slack` of the winner.
    pub runners_up: Vec<Certificate>,
    /// Number of (ball subset, plane) pairs examined.
    pub candidate_count: usize,
    pub accepted_count: usize,
    pub rejections: Vec<RejectionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub tol: f64,
    pub parallel: bool,
    pub runner_up_slack: f64,
    pub keep_rejections: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            parallel: true,
            runner_up_slack: 1e-9,
            keep_rejections: true,
        }
    }
}

/// `sum lambda_j log nu_j + log Phi(sum lambda_j x_j)` and the combined point.
fn objective(problem: &ProblemSpec, target: &Target, ball_indices: &[usize], lambda: &[f64]) -> (f64, Vec<f64>) {
    let points: Vec<&[f64]> = ball_indices.iter().map(|&a| problem.balls[a].p.as_slice()).collect();
    let theta_hat: Vec<f64> = geometry::combine(&points, lambda)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let weighted: f64 = ball_indices
        .iter()
        .zip(lambda)
        .map(|(&a, &l)| l * problem.balls[a].log_nu())
        .sum();
    (weighted + log_phi(&theta_hat, target), theta_hat)
}

fn candidate_with_target(
    problem: &ProblemSpec,
    target: &Target,
    ball_indices: &[usize],
    z: &CandidateZ,
    tol: f64,
) -> Result<Certificate, Rejection> {
    let points: Vec<&[f64]> = ball_indices.iter().map(|&a| problem.balls[a].p.as_slice()).collect();
    let weights = geometry::solve_weights(&points, z, &problem.q, tol)?;
    let (log, _) = objective(problem, target, ball_indices, &weights.lambda);
    Ok(Certificate {
        m: z.m,
        ball_indices: ball_indices.to_vec(),
        z: z.clone(),
        weights,
        log_value: LogValue::from_log(log),
    })
}

/// Value of one structured candidate `(ball subset, plane)`.
pub fn candidate_value(
    problem: &ProblemSpec,
    ball_indices: &[usize],
    z: &CandidateZ,
    tol: f64,
) -> Result<Result<Certificate, Rejection>, EstimateError> {
    problem.check()?;
    let mut sorted = ball_indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != ball_indices.len() || sorted.iter().any(|&a| a >= problem.balls.len()) {
        return Err(EstimateError::RangeError(format!(
            "ball indices {ball_indices:?} must be distinct and below {}",
            problem.balls.len()
        )));
    }
    let target = Target::from_problem(problem)?;
    Ok(candidate_with_target(problem, &target, ball_indices, z, tol))
}

/// `prod nu_j^{lambda_j} Phi(theta(lambda))` for arbitrary simplex weights.
pub fn upper_bound_value(
    problem: &ProblemSpec,
    ball_indices: &[usize],
    lambda: &[f64],
) -> Result<LogValue, EstimateError> {
    problem.check()?;
    if ball_indices.len() != lambda.len() || ball_indices.is_empty() {
        return Err(EstimateError::RangeError(format!(
            "{} indices but {} weights",
            ball_indices.len(),
            lambda.len()
        )));
    }
    if ball_indices.iter().any(|&a| a >= problem.balls.len()) {
        return Err(EstimateError::RangeError("ball index out of range".into()));
    }
    if lambda.iter().any(|&l| l.is_nan() || l < 0.0) || (lambda.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EstimateError::RangeError(format!(
            "weights {lambda:?} are not a point of the simplex"
        )));
    }
    let target = Target::from_problem(problem)?;
    Ok(LogValue::from_log(objective(problem, &target, ball_indices, lambda).0))
}

pub fn estimate(problem: &ProblemSpec, tol: f64) -> Result<EstimateResult, EstimateError> {
    estimate_with(
        problem,
        &EstimateOptions {
            tol,
            ..EstimateOptions::default()
        },
    )
}

pub fn estimate_with(problem: &ProblemSpec, opts: &EstimateOptions) -> Result<EstimateResult, EstimateError> {
    problem.check()?;
    let target = Target::from_problem(problem)?;
    let d = problem.dim();
    let max_m = problem.balls.len().min(d + 1);

    let mut jobs: Vec<(Vec<usize>, CandidateZ)> = Vec::new();
    for m in 1..=max_m {
        let planes = enumerate_z(m, &problem.q, opts.tol);
        for subset in combinations(problem.balls.len(), m) {
            for z in &planes {
                jobs.push((subset.clone(), z.clone()));
            }
        }
    }

    let eval = |(idx, z): &(Vec<usize>, CandidateZ)| {
        candidate_with_target(problem, &target, idx, z, opts.tol).map_err(|rejection| RejectionRecord {
            ball_indices: idx.clone(),
            z: z.clone(),
            rejection,
        })
    };
    let outcomes: Vec<Result<Certificate, RejectionRecord>> = if opts.parallel {
        jobs.par_iter().map(eval).collect()
    } else {
        jobs.iter().map(eval).collect()
    };

    let candidate_count = outcomes.len();
    let mut accepted = Vec::new();
    let mut rejections = Vec::new();
    for o in outcomes {
        match o {
            Ok(c) => accepted.push(c),
            Err(r) if opts.keep_rejections => rejections.push(r),
            Err(_) => {}
        }
    }
    accepted.sort_by(Certificate::order);
    let mut accepted = accepted.into_iter();
    // Every ball is an m = 1 candidate, so this cannot be empty.
    let winner = accepted.next().expect("m = 1 candidates are always accepted");
    let threshold = winner.log_value.log() + opts.runner_up_slack;
    let runners_up: Vec<Certificate> = accepted.take_while(|c| c.log_value.log() <= threshold).collect();
    let accepted_count = candidate_count - rejections.len();
    Ok(EstimateResult {
        log_value: winner.log_value,
        winner,
        runners_up,
        candidate_count,
        accepted_count: if opts.keep_rejections {
            accepted_count
        } else {
            candidate_count
        },
        rejections,
    })
}

/// Independent estimates for each `n`; per-entry failures are kept.
pub fn sweep_n(problem: &ProblemSpec, n_values: &[u64], tol: f64) -> Vec<(u64, Result<EstimateResult, EstimateError>)> {
    n_values
        .iter()
        .map(|&n| (n, estimate(&problem.with_n(n), tol)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ZKind;
    use crate::phi::phi;
    use crate::problem::BallSpec;

    const TOL: f64 = 1e-9;

    fn two_ball(nu2: f64) -> ProblemSpec {
        ProblemSpec::new(
            vec![16],
            vec![4.0],
            4,
            vec![
                BallSpec::from_p(1.0, &[1.0]).unwrap(),
                BallSpec::from_p(nu2, &[f64::INFINITY]).unwrap(),
            ],
        )
    }

    // value(lambda) = 4^{lambda - 1} Phi(1/lambda) on a fine grid.
    fn one_dim_oracle(problem: &ProblemSpec) -> f64 {
        let target = Target::from_problem(problem).unwrap();
        (0..=100_000)
            .map(|i| {
                let l = i as f64 / 100_000.0;
                let x = crate::problem::ReciprocalVector::new(vec![l]).unwrap();
                l * problem.balls[0].log_nu() + (1.0 - l) * problem.balls[1].log_nu() + phi(&x, &target).unwrap().log()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn single_ball_is_nu_times_phi() {
        let p = ProblemSpec::new(
            vec![16, 8],
            vec![4.0, 3.0],
            10,
            vec![BallSpec::from_p(2.5, &[3.0, 1.5]).unwrap()],
        );
        let r = estimate(&p, TOL).unwrap();
        assert_eq!(r.winner.m, 1);
        let t = Target::from_problem(&p).unwrap();
        let expected = p.balls[0].log_nu() + phi(&p.balls[0].p, &t).unwrap().log();
        assert_eq!(r.log_value.log(), expected);
    }

    #[test]
    fn two_ball_d1_qface_winner() {
        let p = two_ball(0.25);
        let r = estimate(&p, TOL).unwrap();
        assert!((r.log_value.log() - (-0.75 * 4f64.ln())).abs() < 1e-9);
        assert!((r.log_value.log() - one_dim_oracle(&p)).abs() < 1e-9);
        assert_eq!(r.winner.m, 2);
        assert_eq!(r.winner.z.kind, ZKind::QFace);
        assert!((r.winner.weights.lambda[0] - 0.25).abs() < 1e-12);
        assert!((r.winner.weights.theta()[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn huge_ball_never_binds() {
        let p = two_ball(1e9);
        let r = estimate(&p, TOL).unwrap();
        assert_eq!(r.winner.m, 1);
        assert_eq!(r.winner.ball_indices, vec![0]);
        assert!(r.log_value.log().abs() < 1e-12);
        assert!(one_dim_oracle(&p) >= r.log_value.log() - 1e-9);
    }

    #[test]
    fn candidate_value_paths() {
        let p = two_ball(0.25);
        let c = candidate_value(&p, &[0], &CandidateZ::full_space(), TOL)
            .unwrap()
            .unwrap();
        assert_eq!(c.weights.lambda, vec![1.0]);
        assert!(c.log_value.log().abs() < 1e-12);

        let qface = CandidateZ {
            kind: ZKind::QFace,
            index_set: vec![0],
            m: 2,
        };
        let c = candidate_value(&p, &[0, 1], &qface, TOL).unwrap().unwrap();
        assert!((c.log_value.value() - 4f64.powf(-0.75)).abs() < 1e-12);

        let pd2 = ProblemSpec::new(
            vec![16, 16],
            vec![4.0, 4.0],
            8,
            vec![
                BallSpec::from_p(1.0, &[1.0, 1.0]).unwrap(),
                BallSpec::from_p(1.0, &[f64::INFINITY, f64::INFINITY]).unwrap(),
            ],
        );
        let omega = CandidateZ {
            kind: ZKind::OmegaEqualizer,
            index_set: vec![0, 1],
            m: 2,
        };
        assert!(matches!(
            candidate_value(&pd2, &[0, 1], &omega, TOL).unwrap(),
            Err(Rejection::Singular { .. })
        ));
        assert!(candidate_value(&p, &[0, 0], &qface, TOL).is_err());
    }

    #[test]
    fn upper_bound_examples() {
        let p = two_ball(0.25);
        let t = Target::from_problem(&p).unwrap();
        let unit = upper_bound_value(&p, &[0, 1], &[1.0, 0.0]).unwrap();
        let direct = p.balls[0].log_nu() + phi(&p.balls[0].p, &t).unwrap().log();
        assert!((unit.log() - direct).abs() < 1e-15);
        let v = upper_bound_value(&p, &[0, 1], &[0.25, 0.75]).unwrap();
        assert!((v.value() - 4f64.powf(-0.75)).abs() < 1e-12);
        let v = upper_bound_value(&p, &[0, 1], &[0.5, 0.5]).unwrap();
        assert!((v.value() - 0.5).abs() < 1e-12);
        assert!(upper_bound_value(&p, &[0, 1], &[0.7, 0.7]).is_err());
        assert!(upper_bound_value(&p, &[0, 1], &[1.5, -0.5]).is_err());
    }

    #[test]
    fn winner_matches_its_own_upper_bound_exactly() {
        let p = two_ball(0.25);
        let r = estimate(&p, TOL).unwrap();
        let ub = r.winner.recompute(&p).unwrap();
        assert_eq!(ub, r.log_value);
    }

    #[test]
    fn sweep_rows() {
        let p = ProblemSpec::new(vec![16], vec![4.0], 1, vec![BallSpec::from_p(1.5, &[3.0]).unwrap()]);
        let rows = sweep_n(&p, &[1], TOL);
        assert_eq!(rows.len(), 1);
        let t = Target::from_problem(&p).unwrap();
        let expected = p.balls[0].log_nu() + phi(&p.balls[0].p, &t).unwrap().log();
        assert_eq!(rows[0].1.as_ref().unwrap().log_value.log(), expected);
        assert!(sweep_n(&p, &[], TOL).is_empty());

        let rows = sweep_n(&two_ball(0.25), &(1..=8).collect::<Vec<_>>(), TOL);
        let vals: Vec<f64> = rows.iter().map(|r| r.1.as_ref().unwrap().log_value.log()).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let rows = sweep_n(&two_ball(0.25), &[0, 9], TOL);
        assert!(rows.iter().all(|r| r.1.is_err()));
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let p = ProblemSpec::new(
            vec![32, 16],
            vec![3.0, 5.0],
            20,
            vec![
                BallSpec::from_p(1.0, &[1.2, 7.0]).unwrap(),
                BallSpec::from_p(0.5, &[3.5, 1.1]).unwrap(),
                BallSpec::from_p(2.0, &[9.0, 2.5]).unwrap(),
            ],
        );
        let seq = estimate_with(
            &p,
            &EstimateOptions {
                parallel: false,
                ..Default::default()
            },
        )
        .unwrap();
        for _ in 0..5 {
            assert_eq!(estimate(&p, TOL).unwrap(), seq);
        }
    }
}
