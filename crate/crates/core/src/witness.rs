//! Single-ball lower-bound witness: the box parameters `s`, their rounding
//! `u`, the scale of the set `nu_a u^{-1/p_a} V_u`, and the inclusion test
//! against every other ball.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logvalue::LogValue;
use crate::phi::{breakpoints, build_context, PhiError, Target, OMEGA_TOL};
use crate::problem::{ProblemError, ProblemSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WitnessError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Phi(#[from] PhiError),
    #[error("value out of range: {0}")]
    RangeError(String),
    #[error("ball index {index} out of range for {count} balls")]
    IndexError { index: usize, count: usize },
}

/// Which `n` regime selected the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum WitnessCase {
    /// `n` at or below the first breakpoint.
    Flat,
    /// One fractional coordinate at sorted position `position`.
    Fractional { position: usize, coordinate: usize },
    /// `n` beyond the last breakpoint.
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSet {
    pub alpha: usize,
    pub case: WitnessCase,
    pub s: Vec<f64>,
    pub u: Vec<u64>,
    /// `log nu_alpha - sum_i log(u_i) / p_{alpha,i}`.
    pub scale_log: f64,
    /// Theorem A value at `u`.
    pub theorem_a_log_value: f64,
    /// `scale_log + theorem_a_log_value`.
    pub witness_log_value: f64,
}

/// Both branches of the Theorem A value at a real `log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremABranches {
    /// `log(prod k^{2/q} s^{1-2/q})`.
    pub breakpoint_log: f64,
    /// `sum log(s) / q`.
    pub low: f64,
    /// `-log(n)/2 + sum log(k) / q + sum log(s) / 2`.
    pub high: f64,
}

fn check_theorem_a_inputs(q: &[f64], k: &[u64], s: &[f64]) -> Result<(), WitnessError> {
    if q.len() != k.len() || s.len() != k.len() {
        return Err(ProblemError::DimensionMismatch(format!(
            "q, k, s have lengths {}, {}, {}",
            q.len(),
            k.len(),
            s.len()
        ))
        .into());
    }
    for i in 0..s.len() {
        if !(s[i] >= 1.0 && s[i] <= k[i] as f64) {
            return Err(WitnessError::RangeError(format!(
                "s[{i}] = {} outside [1, {}]",
                s[i], k[i]
            )));
        }
        if !(q[i].is_finite() && q[i] >= 2.0) {
            return Err(WitnessError::RangeError(format!("q[{i}] = {} must be >= 2", q[i])));
        }
    }
    Ok(())
}

pub fn theorem_a_branches(q: &[f64], k: &[u64], s: &[f64], log_n: f64) -> Result<TheoremABranches, WitnessError> {
    check_theorem_a_inputs(q, k, s)?;
    let mut b = TheoremABranches {
        breakpoint_log: 0.0,
        low: 0.0,
        high: -0.5 * log_n,
    };
    for i in 0..s.len() {
        let (y, lk, ls) = (1.0 / q[i], (k[i] as f64).ln(), s[i].ln());
        b.breakpoint_log += 2.0 * y * lk + (1.0 - 2.0 * y) * ls;
        b.low += y * ls;
        b.high += y * lk + 0.5 * ls;
    }
    Ok(b)
}

/// Theorem A lower bound for the width of `V_s`:
/// `prod s^{1/q}` up to the breakpoint `n = prod k^{2/q} s^{1-2/q}`,
/// `n^{-1/2} prod k^{1/q} s^{1/2}` past it.
pub fn theorem_a_value(q: &[f64], k: &[u64], s: &[f64], n: u64) -> Result<LogValue, WitnessError> {
    if n == 0 {
        return Err(WitnessError::RangeError("n must be >= 1".into()));
    }
    let log_n = (n as f64).ln();
    let b = theorem_a_branches(q, k, s, log_n)?;
    Ok(LogValue::from_log(if log_n <= b.breakpoint_log {
        b.low
    } else {
        b.high
    }))
}

// Integers within a relative 1e-9 are taken as exact before rounding up.
fn round_up(s: f64, k: u64) -> u64 {
    let r = s.round();
    let c = if (s - r).abs() <= 1e-9 * s.max(1.0) {
        r
    } else {
        s.ceil()
    };
    (c as u64).clamp(1, k)
}

pub fn build_witness_m1(problem: &ProblemSpec, alpha: usize) -> Result<WitnessSet, WitnessError> {
    problem.check()?;
    let count = problem.balls.len();
    if alpha >= count {
        return Err(WitnessError::IndexError { index: alpha, count });
    }
    let target = Target::from_problem(problem)?;
    let ball = &problem.balls[alpha];
    let x = ball.p.as_slice();
    let ctx = build_context(&ball.p, &problem.q, OMEGA_TOL);
    let bps = breakpoints(&ctx, &target);
    let d = problem.dim();
    let lk = target.log_k();
    let y = target.y();
    let log_n = target.log_n();
    let sigma = &ctx.sigma;

    let mut s = vec![1.0; d];
    let full_upto = |s: &mut Vec<f64>, upto: usize| {
        for &i in &sigma[..upto] {
            s[i] = problem.k[i] as f64;
        }
    };
    let case = if log_n <= bps[0].1 {
        full_upto(&mut s, ctx.mu);
        WitnessCase::Flat
    } else if log_n > bps[bps.len() - 1].1 {
        full_upto(&mut s, ctx.nu_count);
        WitnessCase::Saturated
    } else {
        let w = bps
            .windows(2)
            .find(|w| w[0].1 < log_n && log_n <= w[1].1)
            .expect("breakpoints bracket log n");
        let position = w[0].0;
        full_upto(&mut s, position);
        let i = sigma[position];
        let numerator = 0.5 * log_n
            - sigma[..position].iter().map(|&j| 0.5 * lk[j]).sum::<f64>()
            - sigma[position..].iter().map(|&j| y[j] * lk[j]).sum::<f64>();
        let log_s = (numerator / (0.5 - y[i])).clamp(0.0, lk[i]);
        s[i] = log_s.exp().clamp(1.0, problem.k[i] as f64);
        WitnessCase::Fractional {
            position,
            coordinate: i,
        }
    };
    let u: Vec<u64> = s.iter().zip(&problem.k).map(|(&s, &k)| round_up(s, k)).collect();
    let scale_log = ball.log_nu() - x.iter().zip(&u).map(|(&xi, &ui)| xi * (ui as f64).ln()).sum::<f64>();
    let uf: Vec<f64> = u.iter().map(|&v| v as f64).collect();
    let theorem_a_log_value = theorem_a_value(&problem.q, &problem.k, &uf, problem.n)?.log();
    Ok(WitnessSet {
        alpha,
        case,
        s,
        u,
        scale_log,
        theorem_a_log_value,
        witness_log_value: scale_log + theorem_a_log_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionEntry {
    pub beta: usize,
    /// `log nu_alpha + sum_i (1/p_{beta,i} - 1/p_{alpha,i}) log s_i`.
    pub lhs_log: f64,
    pub rhs_log: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionReport {
    pub alpha: usize,
    pub slack: f64,
    pub entries: Vec<InclusionEntry>,
    pub passes: bool,
}

/// Checks `nu_alpha prod s_i^{1/p_{beta,i} - 1/p_{alpha,i}} <= nu_beta` for
/// every ball `beta`.
pub fn inclusion_check(problem: &ProblemSpec, witness: &WitnessSet, slack: f64) -> InclusionReport {
    let alpha = &problem.balls[witness.alpha];
    let entries: Vec<InclusionEntry> = problem
        .balls
        .iter()
        .enumerate()
        .map(|(beta, b)| {
            let lhs_log = alpha.log_nu()
                + b.p
                    .as_slice()
                    .iter()
                    .zip(alpha.p.as_slice())
                    .zip(&witness.s)
                    .map(|((xb, xa), s)| (xb - xa) * s.ln())
                    .sum::<f64>();
            let rhs_log = b.log_nu();
            InclusionEntry {
                beta,
                lhs_log,
                rhs_log,
                passes: lhs_log <= rhs_log + slack,
            }
        })
        .collect();
    InclusionReport {
        alpha: witness.alpha,
        slack,
        passes: entries.iter().all(|e| e.passes),
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::phi;
    use crate::problem::BallSpec;

    fn single(p: f64, q: f64, k: u64, n: u64) -> ProblemSpec {
        ProblemSpec::new(vec![k], vec![q], n, vec![BallSpec::from_p(1.0, &[p]).unwrap()])
    }

    #[test]
    fn fractional_case() {
        let w = build_witness_m1(&single(3.0, 4.0, 16, 8), 0).unwrap();
        assert!((w.s[0] - 4.0).abs() < 1e-9, "{}", w.s[0]);
        assert_eq!(w.u, vec![4]);
        assert!(matches!(
            w.case,
            WitnessCase::Fractional {
                position: 0,
                coordinate: 0
            }
        ));
        // p = 1 has omega = 1, so n = 8 is already past the last breakpoint.
        let w = build_witness_m1(&single(1.0, 4.0, 16, 8), 0).unwrap();
        assert_eq!(w.case, WitnessCase::Saturated);
        assert_eq!(w.s, vec![1.0]);
    }

    #[test]
    fn flat_cases() {
        for n in [1, 3, 8] {
            let w = build_witness_m1(&single(f64::INFINITY, 2.0, 16, n), 0).unwrap();
            assert_eq!(w.s, vec![16.0]);
            assert_eq!(w.u, vec![16]);
        }
        let w = build_witness_m1(&single(1.0, 4.0, 16, 2), 0).unwrap();
        assert_eq!(w.s, vec![1.0]);
        assert_eq!(w.case, WitnessCase::Flat);
    }

    #[test]
    fn witness_reproduces_phi() {
        let p = ProblemSpec::new(
            vec![64, 32, 16],
            vec![3.0, 2.0, 5.0],
            300,
            vec![BallSpec::from_p(1.7, &[1.5, f64::INFINITY, 2.5]).unwrap()],
        );
        let t = Target::from_problem(&p).unwrap();
        for n in 1..=p.max_n() as u64 {
            let p = p.with_n(n);
            let t = t.with_n(n).unwrap();
            let w = build_witness_m1(&p, 0).unwrap();
            let exact = p.balls[0].log_nu() + phi(&p.balls[0].p, &t).unwrap().log();
            let ls: f64 = w.s.iter().zip(p.balls[0].p.as_slice()).map(|(s, x)| x * s.ln()).sum();
            let with_s = p.balls[0].log_nu() - ls + theorem_a_value(&p.q, &p.k, &w.s, n).unwrap().log();
            assert!((with_s - exact).abs() < 1e-9, "n = {n}");
            assert!((w.witness_log_value - exact).abs() <= 3.0 * 2f64.ln() + 1e-9);
        }
    }

    #[test]
    fn theorem_a_examples() {
        let v = theorem_a_value(&[4.0], &[16], &[4.0], 8).unwrap();
        assert!((v.value() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            theorem_a_value(&[3.0, 4.0], &[5, 7], &[1.0, 1.0], 1).unwrap().log(),
            0.0
        );
        let q = [3.0, 4.0];
        let k = [8u64, 16];
        let s = [8.0, 16.0];
        let prod: u64 = k.iter().product();
        let v = theorem_a_value(&q, &k, &s, prod).unwrap().log();
        let expected: f64 = q.iter().zip(&k).map(|(q, &k)| (k as f64).ln() / q).sum();
        assert!((v - expected).abs() < 1e-12);
        assert!(matches!(
            theorem_a_value(&[4.0], &[16], &[17.0], 8),
            Err(WitnessError::RangeError(_))
        ));
        assert!(theorem_a_value(&[4.0], &[16], &[0.5], 8).is_err());
    }

    #[test]
    fn inclusion_examples() {
        let p = single(1.0, 4.0, 16, 8);
        let w = build_witness_m1(&p, 0).unwrap();
        let r = inclusion_check(&p, &w, 1e-9);
        assert!(r.passes && r.entries.len() == 1);
        assert_eq!(r.entries[0].lhs_log, r.entries[0].rhs_log);

        let p = ProblemSpec::new(
            vec![16],
            vec![4.0],
            4,
            vec![
                BallSpec::from_p(1.0, &[1.0]).unwrap(),
                BallSpec::from_p(1e9, &[f64::INFINITY]).unwrap(),
            ],
        );
        let w = build_witness_m1(&p, 0).unwrap();
        assert!(inclusion_check(&p, &w, 1e-9).passes);
        assert!(build_witness_m1(&p, 2).is_err());
    }
}
