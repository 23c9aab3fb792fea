//! The SUCPA map, its forward orbits and the map-level invariants.
//!
//! One application of the map sends a bias vector `beta` to
//!
//! ```text
//! f_k(beta) = -log( (1/N_k) * sum_i P_ik / sum_j P_ij exp(beta_j) )
//! ```
//!
//! Everything is evaluated in the log domain: with
//! `L_i = logsumexp_j(log P_ij + beta_j)` the update becomes
//! `f_k = log N_k - logsumexp_i(log P_ik - L_i)`, which stays finite for any
//! finite `beta` of moderate magnitude (hundreds) without rescaling.

use crate::error::{Result, SucpaError};
use crate::numerics::{log_sum_exp, max_abs, softmax_into};
use crate::problem::{BetaVector, SucpaProblem};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// Stopping rule for [`iterate_orbit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitConfig {
    /// Stop once `max_k |delta_k(t)| <= tol`.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig {
            tol: DEFAULT_TOL,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl OrbitConfig {
    pub fn new(tol: f64, max_steps: usize) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(SucpaError::invalid(format!("tol must be > 0, got {tol}")));
        }
        if max_steps == 0 {
            return Err(SucpaError::invalid("max_steps must be >= 1"));
        }
        Ok(OrbitConfig { tol, max_steps })
    }
}

/// A finite forward orbit `beta[0], beta[1], ...` with its increments.
///
/// `increments[t] = points[t + 1] - points[t]`, computed once when the point
/// is appended and never re-derived.
#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    points: Vec<BetaVector>,
    increments: Vec<Vec<f64>>,
    converged_at: Option<usize>,
    tol: Option<f64>,
}

impl Orbit {
    pub fn starting_at(beta0: BetaVector) -> Self {
        Orbit {
            points: vec![beta0],
            increments: Vec::new(),
            converged_at: None,
            tol: None,
        }
    }

    /// Appends the next point and records its increment.
    pub fn push(&mut self, next: BetaVector) {
        let last = self.last();
        let delta = next.iter().zip(last.iter()).map(|(a, b)| a - b).collect();
        self.increments.push(delta);
        self.points.push(next);
    }

    pub fn points(&self) -> &[BetaVector] {
        &self.points
    }

    pub fn increments(&self) -> &[Vec<f64>] {
        &self.increments
    }

    pub fn start(&self) -> &BetaVector {
        &self.points[0]
    }

    pub fn last(&self) -> &BetaVector {
        self.points.last().expect("orbit is never empty")
    }

    /// Number of map applications recorded.
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    /// Discrete time `t` of the increment that met the tolerance.
    pub fn converged_at(&self) -> Option<usize> {
        self.converged_at
    }

    /// Tolerance the orbit was iterated with, if it came from
    /// [`iterate_orbit`].
    pub fn tol(&self) -> Option<f64> {
        self.tol
    }

    /// The final point, when the orbit converged.
    pub fn limit(&self) -> Option<&BetaVector> {
        self.converged_at.map(|_| self.last())
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Per-row log normalizers `L_i = logsumexp_j(log P_ij + beta_j)`.
pub(crate) fn row_log_normalizers(problem: &SucpaProblem, beta: &[f64]) -> Vec<f64> {
    (0..problem.n())
        .map(|i| {
            let lr = problem.log_row(i);
            log_sum_exp(lr.iter().zip(beta).map(|(lp, b)| lp + b))
        })
        .collect()
}

/// Calibrated posteriors `Q_ik = P_ik e^{beta_k} / sum_j P_ij e^{beta_j}`,
/// row-major.
pub(crate) fn calibrated_matrix(problem: &SucpaProblem, beta: &[f64]) -> Vec<f64> {
    let k = problem.k();
    let mut q = vec![0.0; problem.n() * k];
    let mut logits = vec![0.0; k];
    for (i, out) in q.chunks_exact_mut(k).enumerate() {
        for ((l, lp), b) in logits.iter_mut().zip(problem.log_row(i)).zip(beta) {
            *l = lp + b;
        }
        softmax_into(&logits, out);
    }
    q
}

/// One application of the SUCPA map.
pub fn sucpa_step(problem: &SucpaProblem, beta: &BetaVector) -> Result<BetaVector> {
    problem.check_beta(beta)?;
    let n = problem.n();
    let k = problem.k();
    let norms = row_log_normalizers(problem, beta);
    if norms.iter().any(|l| !l.is_finite()) {
        return Err(SucpaError::overflow("row normalizer of the SUCPA map"));
    }

    let counts = problem.counts().as_slice();
    let mut out = Vec::with_capacity(k);
    for (c, &count) in counts.iter().enumerate() {
        let column = (0..n).map(|i| problem.log_row(i)[c] - norms[i]);
        let v = (count as f64).ln() - log_sum_exp(column);
        if !v.is_finite() {
            return Err(SucpaError::overflow(format!(
                "component {c} of the SUCPA map"
            )));
        }
        out.push(v);
    }
    BetaVector::new(out)
}

/// `||f(beta) - beta||_inf`.
pub fn fixed_point_residual(problem: &SucpaProblem, beta: &BetaVector) -> Result<f64> {
    let next = sucpa_step(problem, beta)?;
    Ok(next.max_abs_diff(beta))
}

/// Iterates the map from `beta0` until the max-norm of the increment drops
/// to `tol` or `max_steps` applications have been made.
pub fn iterate_orbit(
    problem: &SucpaProblem,
    beta0: BetaVector,
    tol: f64,
    max_steps: usize,
) -> Result<Orbit> {
    let config = OrbitConfig::new(tol, max_steps)?;
    problem.check_beta(&beta0)?;
    let mut orbit = Orbit::starting_at(beta0);
    orbit.tol = Some(config.tol);
    for t in 0..config.max_steps {
        let next = sucpa_step(problem, orbit.last()).map_err(|e| SucpaError::Step {
            step: t,
            source: Box::new(e),
        })?;
        orbit.push(next);
        if max_abs(&orbit.increments[t]) <= config.tol {
            orbit.converged_at = Some(t);
            break;
        }
    }
    Ok(orbit)
}

/// Applies the map exactly `steps` times, ignoring convergence.
pub fn fixed_steps_orbit(problem: &SucpaProblem, beta0: BetaVector, steps: usize) -> Result<Orbit> {
    problem.check_beta(&beta0)?;
    let mut orbit = Orbit::starting_at(beta0);
    for t in 0..steps {
        let next = sucpa_step(problem, orbit.last()).map_err(|e| SucpaError::Step {
            step: t,
            source: Box::new(e),
        })?;
        orbit.push(next);
    }
    Ok(orbit)
}

/// `|sum_k N_k exp(-delta_k(t)) - N|` for every recorded increment.
///
/// The balance `sum_k N_k exp(-delta_k) = N` holds exactly for every step of
/// the map, so the residuals measure round-off only.
pub fn increment_identity_residual(problem: &SucpaProblem, orbit: &Orbit) -> Result<Vec<f64>> {
    if orbit.dim() != problem.k() {
        return Err(SucpaError::ShapeMismatch {
            expected: format!("orbit of dimension {}", problem.k()),
            got: format!("dimension {}", orbit.dim()),
        });
    }
    let counts = problem.counts().as_f64();
    let n = problem.n() as f64;
    Ok(orbit
        .increments()
        .iter()
        .map(|delta| {
            let s: f64 = counts.iter().zip(delta).map(|(c, d)| c * (-d).exp()).sum();
            (s - n).abs()
        })
        .collect())
}

/// Runs orbits from `beta0` and `beta0 + lambda * 1` for `steps` steps and
/// returns `max_t ||orbit2[t] - orbit1[t] - lambda * 1||_inf`.
pub fn shift_orbit_equivariance_check(
    problem: &SucpaProblem,
    beta0: &BetaVector,
    lambda: f64,
    steps: usize,
) -> Result<f64> {
    if steps == 0 {
        return Err(SucpaError::invalid("steps must be >= 1"));
    }
    if !lambda.is_finite() {
        return Err(SucpaError::invalid(format!(
            "lambda = {lambda} is not finite"
        )));
    }
    let base = fixed_steps_orbit(problem, beta0.clone(), steps)?;
    let shifted = fixed_steps_orbit(problem, beta0.shifted(lambda)?, steps)?;
    let dev = base
        .points()
        .iter()
        .zip(shifted.points())
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (y - x - lambda).abs()))
        .fold(0.0, f64::max);
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ClassCounts, PosteriorMatrix};

    fn uniform(n: usize, k: usize) -> SucpaProblem {
        let p = PosteriorMatrix::new(n, k, vec![1.0 / k as f64; n * k]).unwrap();
        let c = ClassCounts::new(vec![(n / k) as u64; k]).unwrap();
        SucpaProblem::new(p, c).unwrap()
    }

    fn two_by_two() -> SucpaProblem {
        let p = PosteriorMatrix::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap();
        SucpaProblem::new(p, ClassCounts::new(vec![1, 1]).unwrap()).unwrap()
    }

    /// Direct scalar evaluation of the map for the 2x2 problem.
    fn oracle_2x2(b1: f64, b2: f64) -> [f64; 2] {
        let d1 = 0.8 * b1.exp() + 0.2 * b2.exp();
        let d2 = 0.3 * b1.exp() + 0.7 * b2.exp();
        let f1 = -(0.8 / d1 + 0.3 / d2).ln();
        let f2 = -(0.2 / d1 + 0.7 / d2).ln();
        [f1, f2]
    }

    #[test]
    fn uniform_problem_is_fixed_at_origin() {
        let p = uniform(6, 3);
        let out = sucpa_step(&p, &BetaVector::zeros(3)).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn matches_scalar_oracle() {
        let p = two_by_two();
        for &(b1, b2) in &[(0.0, 0.0), (0.3, -1.2), (4.0, 2.5)] {
            let got = sucpa_step(&p, &BetaVector::new(vec![b1, b2]).unwrap()).unwrap();
            let want = oracle_2x2(b1, b2);
            assert!((got[0] - want[0]).abs() < 1e-14);
            assert!((got[1] - want[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn shift_by_constant() {
        let p = two_by_two();
        let b = BetaVector::new(vec![0.4, -0.9]).unwrap();
        let a = sucpa_step(&p, &b).unwrap();
        let s = sucpa_step(&p, &b.shifted(2.5).unwrap()).unwrap();
        for (x, y) in a.iter().zip(s.iter()) {
            assert!((y - x - 2.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_orbit_converges_immediately() {
        let p = uniform(4, 2);
        let orbit = iterate_orbit(&p, BetaVector::zeros(2), 1e-9, 10).unwrap();
        assert_eq!(orbit.converged_at(), Some(0));
        assert!(orbit.limit().unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn converged_limit_is_fixed_point() {
        let p = two_by_two();
        let orbit = iterate_orbit(&p, BetaVector::zeros(2), 1e-10, 10_000).unwrap();
        assert!(orbit.converged());
        let limit = orbit.limit().unwrap();
        let f = oracle_2x2(limit[0], limit[1]);
        assert!((f[0] - limit[0]).abs().max((f[1] - limit[1]).abs()) <= 1e-9);
    }

    #[test]
    fn increment_identity_first_step_matches_oracle() {
        let p = two_by_two();
        let orbit = iterate_orbit(&p, BetaVector::zeros(2), 1e-10, 100).unwrap();
        let res = increment_identity_residual(&p, &orbit).unwrap();
        let f = oracle_2x2(0.0, 0.0);
        let oracle = ((-f[0]).exp() + (-f[1]).exp() - 2.0).abs();
        assert!((res[0] - oracle).abs() <= 1e-12);
        assert!(res.iter().all(|r| *r <= 1e-8 * 2.0));
    }

    #[test]
    fn single_point_orbit_has_no_residuals() {
        let p = two_by_two();
        let orbit = Orbit::starting_at(BetaVector::zeros(2));
        assert!(increment_identity_residual(&p, &orbit).unwrap().is_empty());
    }

    #[test]
    fn zero_shift_gives_zero_deviation() {
        let p = two_by_two();
        let b = BetaVector::new(vec![0.0, 2.0]).unwrap();
        assert_eq!(
            shift_orbit_equivariance_check(&p, &b, 0.0, 20).unwrap(),
            0.0
        );
    }

    #[test]
    fn large_negative_shift_is_stable() {
        let p = two_by_two();
        let b = BetaVector::new(vec![0.0, 2.0]).unwrap();
        let dev = shift_orbit_equivariance_check(&p, &b, -300.0, 50).unwrap();
        assert!(dev <= 1e-8, "{dev}");
    }

    #[test]
    fn extreme_beta_is_controlled() {
        let p = two_by_two();
        let b = BetaVector::new(vec![1e308, -1e308]).unwrap();
        match sucpa_step(&p, &b) {
            Ok(v) => assert!(v.iter().all(|x| x.is_finite())),
            Err(e) => assert!(e.is_numeric(), "{e}"),
        }
    }

    #[test]
    fn step_errors_carry_index() {
        let p = two_by_two();
        let b = BetaVector::new(vec![1e308, -1e308]).unwrap();
        if let Err(e) = iterate_orbit(&p, b, 1e-9, 5) {
            assert!(matches!(e, SucpaError::Step { step: 0, .. }));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let p = two_by_two();
        assert!(iterate_orbit(&p, BetaVector::zeros(2), 0.0, 10).is_err());
        assert!(iterate_orbit(&p, BetaVector::zeros(2), 1e-9, 0).is_err());
        assert!(iterate_orbit(&p, BetaVector::zeros(3), 1e-9, 10).is_err());
    }
}
