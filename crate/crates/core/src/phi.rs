//! Exponent calculus for a single anisotropic ball: the interpolation
//! exponent `omega`, the ordering permutation, the counts `mu` / `nu`, and
//! the order function `Phi(p, q, k, n)` in two independent forms.
//!
//! Everything works in reciprocal coordinates `x = 1/p`, `y = 1/q` and in
//! the log domain.

use thiserror::Error;

use crate::logvalue::LogValue;
use crate::problem::{ProblemSpec, ReciprocalVector};

/// Tolerance on `omega` for the membership tests `omega = 0` and `omega = 1`.
pub const OMEGA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhiError {
    #[error("value out of range: {0}")]
    RangeError(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("permutation does not order omega ascending: {0}")]
    InvalidOrder(String),
}

/// `omega_{p,q}` in reciprocal coordinates: `0` below `y`, `1` from `1/2` on,
/// linear in between. For `y = 1/2` it is the step at `x = 1/2`.
pub fn omega(x: f64, y: f64) -> Result<f64, PhiError> {
    if !(y > 0.0 && y <= 0.5) {
        return Err(PhiError::RangeError(format!(
            "reciprocal target y = {y} must lie in (0, 1/2]"
        )));
    }
    Ok(omega_unchecked(x, y))
}

#[inline]
pub(crate) fn omega_unchecked(x: f64, y: f64) -> f64 {
    if x >= 0.5 {
        1.0
    } else if x < y {
        0.0
    } else {
        (x - y) / (0.5 - y)
    }
}

/// The unclamped `omega'_{p,q} = (x - y) / (1/2 - y)`, defined for `q > 2`.
pub fn omega_prime(x: f64, y: f64) -> Result<f64, PhiError> {
    if !(y > 0.0 && y < 0.5) {
        return Err(PhiError::RangeError(format!(
            "omega' needs q > 2 (y = {y} must lie in (0, 1/2))"
        )));
    }
    Ok((x - y) / (0.5 - y))
}

/// Target-space data `(q, k, n)` with logarithms precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    q: Vec<f64>,
    y: Vec<f64>,
    k: Vec<u64>,
    log_k: Vec<f64>,
    n: u64,
    log_n: f64,
}

impl Target {
    pub fn new(q: &[f64], k: &[u64], n: u64) -> Result<Self, PhiError> {
        if q.len() != k.len() || q.is_empty() {
            return Err(PhiError::DimensionMismatch(format!(
                "q has {} entries, k has {}",
                q.len(),
                k.len()
            )));
        }
        if let Some(bad) = q.iter().find(|q| !(q.is_finite() && **q >= 2.0)) {
            return Err(PhiError::RangeError(format!("q = {bad} must be finite and >= 2")));
        }
        if k.contains(&0) {
            return Err(PhiError::RangeError("k_i must be >= 1".into()));
        }
        if n == 0 {
            return Err(PhiError::RangeError("n must be >= 1".into()));
        }
        Ok(Self {
            q: q.to_vec(),
            y: q.iter().map(|q| 1.0 / q).collect(),
            k: k.to_vec(),
            log_k: k.iter().map(|&k| (k as f64).ln()).collect(),
            n,
            log_n: (n as f64).ln(),
        })
    }

    /// Target of an already checked problem.
    pub fn from_problem(problem: &ProblemSpec) -> Result<Self, PhiError> {
        Self::new(&problem.q, &problem.k, problem.n)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Reciprocal targets `1/q_i`.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn k(&self) -> &[u64] {
        &self.k
    }

    pub fn log_k(&self) -> &[f64] {
        &self.log_k
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn log_n(&self) -> f64 {
        self.log_n
    }

    pub fn with_n(&self, n: u64) -> Result<Self, PhiError> {
        if n == 0 {
            return Err(PhiError::RangeError("n must be >= 1".into()));
        }
        Ok(Self {
            n,
            log_n: (n as f64).ln(),
            ..self.clone()
        })
    }
}

/// Ordering data for one exponent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiContext {
    /// `sigma[j]` is the coordinate in position `j` (0-based).
    pub sigma: Vec<usize>,
    /// `omega_{p_i, q_i}` indexed by coordinate, not by position.
    pub omega: Vec<f64>,
    pub mu: usize,
    pub nu_count: usize,
    /// `min(x_i, 1/2)`.
    pub p_star: ReciprocalVector,
}

impl PhiContext {
    pub fn omega_at(&self, position: usize) -> f64 {
        self.omega[self.sigma[position]]
    }
}

fn omegas(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(&x, &y)| omega_unchecked(x, y)).collect()
}

fn counts(omega: &[f64], sigma: &[usize], tol: f64) -> (usize, usize) {
    let mu = sigma.iter().take_while(|&&i| omega[i] <= tol).count();
    let nu = sigma.iter().take_while(|&&i| omega[i] < 1.0 - tol).count();
    (mu, nu.max(mu))
}

fn stable_order(omega: &[f64]) -> Vec<usize> {
    let mut sigma: Vec<usize> = (0..omega.len()).collect();
    sigma.sort_by(|&a, &b| omega[a].total_cmp(&omega[b]));
    sigma
}

/// Stable ascending sort of coordinates by `omega`, plus `mu` and `nu`.
pub fn build_context(p: &ReciprocalVector, q: &[f64], tol: f64) -> PhiContext {
    let y: Vec<f64> = q.iter().map(|q| 1.0 / q).collect();
    let omega = omegas(p.as_slice(), &y);
    let sigma = stable_order(&omega);
    let (mu, nu_count) = counts(&omega, &sigma, tol);
    PhiContext {
        sigma,
        omega,
        mu,
        nu_count,
        p_star: ReciprocalVector::clamped(p.as_slice().iter().map(|&x| x.min(0.5)).collect()),
    }
}

fn check_dim(p: &ReciprocalVector, target: &Target) -> Result<(), PhiError> {
    if p.dim() != target.dim() {
        return Err(PhiError::DimensionMismatch(format!(
            "exponent vector has {} coordinates, target has {}",
            p.dim(),
            target.dim()
        )));
    }
    Ok(())
}

/// `log Phi` from the min form:
///
/// `prod_{j<mu} k^{y-x} * min{1, min_{t>=mu} prod_{mu<=j<t} k^{y-x*}
///  * (n^{-1/2} prod_{j<t} k^{1/2} prod_{j>=t} k^{y})^{omega_t}}`
/// with positions taken in the order `sigma`.
fn log_phi_min_form(x: &[f64], target: &Target, omega: &[f64], sigma: &[usize]) -> f64 {
    let y = &target.y;
    let lk = &target.log_k;
    let (mu, _) = counts(omega, sigma, OMEGA_TOL);

    let head: f64 = sigma[..mu].iter().map(|&i| (y[i] - x[i]) * lk[i]).sum();
    if mu == sigma.len() {
        return head;
    }

    // Running pieces of the t-th term, t = mu..d-1 (0-based positions).
    let mut star_prefix = 0.0; // sum_{mu<=j<t} (y - x*) log k
    let mut half_prefix: f64 = sigma[..mu].iter().map(|&i| 0.5 * lk[i]).sum();
    let mut y_suffix: f64 = sigma[mu..].iter().map(|&i| y[i] * lk[i]).sum();
    let mut inner = f64::INFINITY;
    for &i in &sigma[mu..] {
        let base = -0.5 * target.log_n + half_prefix + y_suffix;
        inner = inner.min(star_prefix + omega[i] * base);
        star_prefix += (y[i] - x[i].min(0.5)) * lk[i];
        half_prefix += 0.5 * lk[i];
        y_suffix -= y[i] * lk[i];
    }
    head + inner.min(0.0)
}

/// `Phi(p, q, k, n)` via the min form with the stable ordering.
pub fn phi(p: &ReciprocalVector, target: &Target) -> Result<LogValue, PhiError> {
    check_dim(p, target)?;
    Ok(LogValue::from_log(log_phi(p.as_slice(), target)))
}

/// Unchecked fast path of [`phi`] for callers that already hold a valid
/// point of matching dimension.
pub fn log_phi(x: &[f64], target: &Target) -> f64 {
    let omega = omegas(x, &target.y);
    let sigma = stable_order(&omega);
    log_phi_min_form(x, target, &omega, &sigma)
}

/// `Phi` under an explicitly chosen ordering, which must sort `omega`
/// ascending up to `tol`.
pub fn phi_with_order(p: &ReciprocalVector, target: &Target, sigma: &[usize], tol: f64) -> Result<LogValue, PhiError> {
    check_dim(p, target)?;
    let d = target.dim();
    let mut seen = vec![false; d];
    for &i in sigma {
        if i >= d || std::mem::replace(&mut seen[i], true) {
            return Err(PhiError::InvalidOrder(format!("{sigma:?} is not a permutation")));
        }
    }
    if sigma.len() != d {
        return Err(PhiError::InvalidOrder(format!("{sigma:?} is not a permutation")));
    }
    let omega = omegas(p.as_slice(), &target.y);
    if let Some(w) = sigma.windows(2).find(|w| omega[w[0]] > omega[w[1]] + tol) {
        return Err(PhiError::InvalidOrder(format!(
            "omega[{}] = {} > omega[{}] = {}",
            w[0], omega[w[0]], w[1], omega[w[1]]
        )));
    }
    Ok(LogValue::from_log(log_phi_min_form(
        p.as_slice(),
        target,
        &omega,
        sigma,
    )))
}

/// Every permutation that orders `omega` ascending, ties (within `tol`)
/// permuted freely. Exponential in the tie sizes; meant for small `d`.
pub fn admissible_orders(omega: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let base = stable_order(omega);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &base {
        match groups.last_mut() {
            Some(g) if (omega[i] - omega[g[0]]).abs() <= tol => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let mut out = vec![Vec::new()];
    for g in &groups {
        let perms = permutations(g);
        out = out
            .into_iter()
            .flat_map(|prefix| {
                perms.iter().map(move |p| {
                    let mut v = prefix.clone();
                    v.extend_from_slice(p);
                    v
                })
            })
            .collect();
    }
    out
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

/// Which closed form applies for the given `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `n` below the first breakpoint: only the `omega = 0` block contributes.
    Flat,
    /// Between breakpoints `t-1` and `t`; `position` is the 0-based
    /// position `t-1` of the interpolating coordinate.
    Interpolating { position: usize },
    /// `n` beyond the last breakpoint.
    Decaying,
}

/// Log breakpoints `B_t = sum_{j<t} log k + sum_{j>=t} (2/q) log k` for
/// positions `t = mu..=nu`, as pairs `(t, B_t)`.
pub fn breakpoints(ctx: &PhiContext, target: &Target) -> Vec<(usize, f64)> {
    let lk = &target.log_k;
    let y = &target.y;
    (ctx.mu..=ctx.nu_count)
        .map(|t| {
            let full: f64 = ctx.sigma[..t].iter().map(|&i| lk[i]).sum();
            let part: f64 = ctx.sigma[t..].iter().map(|&i| 2.0 * y[i] * lk[i]).sum();
            (t, full + part)
        })
        .collect()
}

/// Locates `n` among the breakpoints.
pub fn regime(ctx: &PhiContext, target: &Target) -> Regime {
    let bps = breakpoints(ctx, target);
    let log_n = target.log_n;
    if log_n <= bps[0].1 {
        return Regime::Flat;
    }
    if log_n >= bps[bps.len() - 1].1 {
        return Regime::Decaying;
    }
    let w = bps
        .windows(2)
        .find(|w| w[0].1 <= log_n && log_n <= w[1].1)
        .expect("breakpoints are nondecreasing and bracket log n");
    Regime::Interpolating { position: w[0].0 }
}

/// `Phi` from the regime-wise closed forms: the product over the
/// `omega = 0` block below the first breakpoint, one interpolating
/// coordinate between breakpoints, and the `n^{-1/2}` law beyond the last.
pub fn phi_piecewise(p: &ReciprocalVector, target: &Target) -> Result<LogValue, PhiError> {
    check_dim(p, target)?;
    let ctx = build_context(p, &target.q, OMEGA_TOL);
    let x = p.as_slice();
    let y = &target.y;
    let lk = &target.log_k;
    let s = &ctx.sigma;
    let head = |upto: usize| -> f64 { s[..upto].iter().map(|&i| (y[i] - x[i]) * lk[i]).sum() };
    let log = match regime(&ctx, target) {
        Regime::Flat => head(ctx.mu),
        Regime::Interpolating { position: t } => {
            let i = s[t];
            let base = -0.5 * target.log_n
                + s[..t].iter().map(|&j| 0.5 * lk[j]).sum::<f64>()
                + s[t..].iter().map(|&j| y[j] * lk[j]).sum::<f64>();
            let exponent = (x[i] - y[i]) / (0.5 - y[i]);
            head(t) + exponent * base
        }
        Regime::Decaying => {
            let nu = ctx.nu_count;
            head(nu) - 0.5 * target.log_n
                + s[..nu].iter().map(|&j| 0.5 * lk[j]).sum::<f64>()
                + s[nu..].iter().map(|&j| y[j] * lk[j]).sum::<f64>()
        }
    };
    Ok(LogValue::from_log(log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(x: &[f64]) -> ReciprocalVector {
        ReciprocalVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn omega_examples() {
        assert_eq!(omega(1.0 / 3.0, 0.5).unwrap(), 0.0);
        assert_eq!(omega(2.0 / 3.0, 0.25).unwrap(), 1.0);
        assert!((omega(0.25, 0.125).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(omega(0.5, 0.5).unwrap(), 1.0);
        assert!(omega(0.3, 0.6).is_err());
        assert!(omega(0.3, 0.0).is_err());
    }

    #[test]
    fn omega_prime_examples() {
        assert_eq!(omega_prime(0.25, 0.25).unwrap(), 0.0);
        assert_eq!(omega_prime(0.5, 0.25).unwrap(), 1.0);
        assert_eq!(omega_prime(0.0, 0.25).unwrap(), -1.0);
        assert!(omega_prime(0.3, 0.5).is_err());
    }

    #[test]
    fn context_examples() {
        let ctx = build_context(&rv(&[1.0, 0.0]), &[4.0, 4.0], OMEGA_TOL);
        assert_eq!(ctx.omega, vec![1.0, 0.0]);
        assert_eq!(ctx.sigma, vec![1, 0]);
        assert_eq!((ctx.mu, ctx.nu_count), (1, 1));

        let ctx = build_context(&rv(&[0.25]), &[4.0], OMEGA_TOL);
        assert_eq!((ctx.mu, ctx.nu_count), (1, 1));

        let ctx = build_context(&rv(&[0.5; 3]), &[4.0; 3], OMEGA_TOL);
        assert_eq!(ctx.omega, vec![1.0; 3]);
        assert_eq!(ctx.sigma, vec![0, 1, 2]);
        assert_eq!((ctx.mu, ctx.nu_count), (0, 0));
        assert_eq!(ctx.p_star.as_slice(), &[0.5; 3]);
    }

    #[test]
    fn phi_examples() {
        let t = Target::new(&[4.0], &[16], 8).unwrap();
        assert!(phi(&rv(&[0.25]), &t).unwrap().log().abs() < 1e-15);
        let v = phi(&rv(&[1.0]), &t).unwrap();
        assert!((v.value() - 0.5f64.sqrt()).abs() < 1e-12);

        let t = Target::new(&[4.0, 4.0], &[16, 16], 8).unwrap();
        let v = phi(&rv(&[1.0, 0.0]), &t).unwrap();
        assert!((v.log() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn piecewise_examples() {
        let t = Target::new(&[2.0], &[16], 8).unwrap();
        let v = phi_piecewise(&rv(&[0.0]), &t).unwrap();
        assert!((v.value() - 4.0).abs() < 1e-12);
        let ctx = build_context(&rv(&[0.0]), &[2.0], OMEGA_TOL);
        assert_eq!(regime(&ctx, &t), Regime::Flat);

        let t = Target::new(&[4.0], &[16], 8).unwrap();
        let v = phi_piecewise(&rv(&[1.0]), &t).unwrap();
        assert!((v.value() - 0.5f64.sqrt()).abs() < 1e-12);
        let ctx = build_context(&rv(&[1.0]), &[4.0], OMEGA_TOL);
        assert_eq!(regime(&ctx, &t), Regime::Decaying);
    }

    #[test]
    fn interpolating_regime_matches_min_form() {
        // p = 3, q = 4, k = 64: breakpoints 64^{1/2} = 8 and 64.
        let t = Target::new(&[4.0], &[64], 20).unwrap();
        let x = rv(&[1.0 / 3.0]);
        let ctx = build_context(&x, &[4.0], OMEGA_TOL);
        assert_eq!(regime(&ctx, &t), Regime::Interpolating { position: 0 });
        let a = phi(&x, &t).unwrap().log();
        let b = phi_piecewise(&x, &t).unwrap().log();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn all_mu_block_gives_product_only() {
        let t = Target::new(&[4.0, 3.0], &[16, 27], 10).unwrap();
        let x = rv(&[0.0, 0.1]);
        let expected = 0.25 * 16f64.ln() + (1.0 / 3.0 - 0.1) * 27f64.ln();
        assert!((phi(&x, &t).unwrap().log() - expected).abs() < 1e-12);
    }

    #[test]
    fn explicit_order_must_sort_omega() {
        let t = Target::new(&[4.0, 4.0], &[16, 16], 8).unwrap();
        let x = rv(&[1.0, 0.0]);
        assert!(phi_with_order(&x, &t, &[0, 1], 1e-12).is_err());
        assert!(phi_with_order(&x, &t, &[0, 0], 1e-12).is_err());
        let a = phi_with_order(&x, &t, &[1, 0], 1e-12).unwrap();
        assert_eq!(a, phi(&x, &t).unwrap());
    }

    #[test]
    fn tied_orders_enumerated() {
        let orders = admissible_orders(&[0.3, 0.0, 0.3, 0.3], 1e-12);
        assert_eq!(orders.len(), 6);
        assert!(orders.iter().all(|o| o[0] == 1));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let t = Target::new(&[4.0, 4.0], &[16, 16], 8).unwrap();
        assert!(matches!(phi(&rv(&[0.5]), &t), Err(PhiError::DimensionMismatch(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<u64>, f64)> {
            (1usize..=4).prop_flat_map(|d| {
                (
                    proptest::collection::vec(0.0f64..=1.0, d),
                    proptest::collection::vec(2.0f64..10.0, d),
                    proptest::collection::vec(1u64..=4096, d),
                    0.0f64..1.0,
                )
            })
        }

        proptest! {
            #[test]
            fn min_form_equals_piecewise((x, q, k, u) in instance()) {
                let max_n = (k.iter().map(|&k| k as f64).product::<f64>() / 2.0).floor().max(1.0);
                let n = (max_n.powf(u)).round().clamp(1.0, max_n) as u64;
                let t = Target::new(&q, &k, n).unwrap();
                let x = ReciprocalVector::new(x).unwrap();
                let a = phi(&x, &t).unwrap().log();
                let b = phi_piecewise(&x, &t).unwrap().log();
                prop_assert!((a - b).abs() <= 1e-9, "min form {a} vs piecewise {b}");
            }

            #[test]
            fn relabeling_is_exact((x, q, k, u) in instance(), shift in 0usize..4) {
                let d = x.len();
                let n = ((k.iter().map(|&k| k as f64).product::<f64>() / 2.0).max(1.0).powf(u)).floor().max(1.0) as u64;
                let perm: Vec<usize> = (0..d).map(|i| (i + shift) % d).collect();
                let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
                let pq: Vec<f64> = perm.iter().map(|&i| q[i]).collect();
                let pk: Vec<u64> = perm.iter().map(|&i| k[i]).collect();
                let a = phi(&ReciprocalVector::new(x).unwrap(), &Target::new(&q, &k, n).unwrap()).unwrap();
                let b = phi(&ReciprocalVector::new(px).unwrap(), &Target::new(&pq, &pk, n).unwrap()).unwrap();
                prop_assert!((a.log() - b.log()).abs() <= 1e-12);
            }

            #[test]
            fn nonincreasing_in_n((x, q, k, _u) in instance()) {
                let max_n = (k.iter().map(|&k| k as f64).product::<f64>() / 2.0).floor().max(1.0) as u64;
                let x = ReciprocalVector::new(x).unwrap();
                let t = Target::new(&q, &k, 1).unwrap();
                let mut prev = f64::INFINITY;
                let mut n = 1u64;
                while n <= max_n {
                    let v = phi(&x, &t.with_n(n).unwrap()).unwrap().log();
                    prop_assert!(v <= prev + 1e-12);
                    prev = v;
                    n = n * 2 + 1;
                }
            }

            #[test]
            fn bounded_by_mu_block((x, q, k, u) in instance()) {
                let n = ((k.iter().map(|&k| k as f64).product::<f64>() / 2.0).max(1.0).powf(u)).floor().max(1.0) as u64;
                let t = Target::new(&q, &k, n).unwrap();
                let xv = ReciprocalVector::new(x.clone()).unwrap();
                let ctx = build_context(&xv, &q, OMEGA_TOL);
                let head: f64 = ctx.sigma[..ctx.mu].iter()
                    .map(|&i| (1.0 / q[i] - x[i]) * (k[i] as f64).ln()).sum();
                let v = phi(&xv, &t).unwrap();
                prop_assert!(v.value() > 0.0);
                prop_assert!(v.log() <= head + 1e-12);
            }
        }
    }
}
