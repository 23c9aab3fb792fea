//! Two-class analysis.
//!
//! For `K = 2` every slope-one line `beta_2 - beta_1 = x` is mapped onto
//! another slope-one line, with intercept `phi(x) = log(alpha_1(x) / alpha_2(x))`
//! where
//!
//! ```text
//! alpha_1(x) = (1/N_1) sum_i P_i1 / (P_i1 + P_i2 e^x)
//! alpha_2(x) = (1/N_2) sum_i P_i2 / (P_i1 + P_i2 e^x)
//! ```
//!
//! Both are strictly decreasing, `alpha_1` falls from `N/N_1` to `0`, and the
//! unique root of `alpha_1(b) = 1` is the intercept of the line of fixed
//! points. Internally each row is reduced to its log-odds
//! `r_i = log(P_i2 / P_i1)`: with `z_i = x + r_i` the row terms are logistic
//! functions of `z_i`, which keeps every quantity finite for large `|x|`.

use crate::error::{Result, SucpaError};
use crate::map::Orbit;
use crate::numerics::log_sum_exp;
use crate::problem::{BetaVector, SucpaProblem};

/// Default width of the final bisection bracket for the intercept.
pub const DEFAULT_INTERCEPT_TOL: f64 = 1e-12;

/// Maximum number of bracket doublings before giving up.
pub const MAX_BRACKET_DOUBLINGS: usize = 200;

/// Increments at or below this magnitude are treated as round-off when
/// reading slopes off an orbit.
pub const SLOPE_RESOLUTION: f64 = 100.0 * f64::EPSILON;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(t))` without overflow.
fn log_sigmoid(t: f64) -> f64 {
    -((-t).max(0.0) + (-t.abs()).exp().ln_1p())
}

/// A [`SucpaProblem`] with exactly two classes.
#[derive(Debug, Clone)]
pub struct TwoClassProblem {
    problem: SucpaProblem,
    log_odds: Vec<f64>,
    n1: f64,
    n2: f64,
}

/// The line of fixed points `beta_2 = beta_1 + b` and the local dynamics
/// transverse to it.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedLine {
    pub intercept_b: f64,
    /// Non-unit eigenvalue of the Jacobian on the line, in `[0, 1)`.
    pub stable_eigenvalue_mu: f64,
    /// Unit vector along `[N_2, -N_1]`.
    pub stable_eigenvector: [f64; 2],
    /// `[0, b]`.
    pub representative_point: BetaVector,
}

impl TwoClassProblem {
    pub fn new(problem: SucpaProblem) -> Result<Self> {
        if problem.k() != 2 {
            return Err(SucpaError::invalid(format!(
                "two-class analysis needs K = 2, got K = {}",
                problem.k()
            )));
        }
        let log_odds = (0..problem.n())
            .map(|i| {
                let lr = problem.log_row(i);
                lr[1] - lr[0]
            })
            .collect();
        let c = problem.counts().as_f64();
        Ok(TwoClassProblem {
            n1: c[0],
            n2: c[1],
            log_odds,
            problem,
        })
    }

    pub fn problem(&self) -> &SucpaProblem {
        &self.problem
    }

    pub fn counts(&self) -> (f64, f64) {
        (self.n1, self.n2)
    }

    fn n(&self) -> f64 {
        self.n1 + self.n2
    }

    fn check_x(x: f64) -> Result<()> {
        if x.is_finite() {
            Ok(())
        } else {
            Err(SucpaError::invalid(format!("x = {x} is not finite")))
        }
    }

    fn finite(v: f64, what: &str) -> Result<f64> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SucpaError::overflow(what.to_string()))
        }
    }

    /// `(alpha_1(x), alpha_2(x))`.
    pub fn alpha(&self, x: f64) -> Result<(f64, f64)> {
        Self::check_x(x)?;
        let (mut s1, mut s2) = (0.0, 0.0);
        for &r in &self.log_odds {
            let z = x + r;
            s1 += sigmoid(-z);
            s2 += sigmoid(z);
        }
        let a1 = s1 / self.n1;
        let a2 = Self::finite((-x).exp() * s2 / self.n2, "alpha_2")?;
        Ok((a1, a2))
    }

    fn alpha1(&self, x: f64) -> f64 {
        self.log_odds
            .iter()
            .map(|&r| sigmoid(-(x + r)))
            .sum::<f64>()
            / self.n1
    }

    /// `(alpha_1'(x), alpha_2'(x))`, both negative.
    pub fn alpha_prime(&self, x: f64) -> Result<(f64, f64)> {
        Self::check_x(x)?;
        let (mut d1, mut d2) = (0.0, 0.0);
        for &r in &self.log_odds {
            let z = x + r;
            let (sp, sm) = (sigmoid(z), sigmoid(-z));
            d1 += sp * sm;
            d2 += sp * sp;
        }
        let a1 = -d1 / self.n1;
        let a2 = Self::finite(-(-x).exp() * d2 / self.n2, "alpha_2'")?;
        Ok((a1, a2))
    }

    /// `e^x alpha_2'(x)`, evaluated without forming `e^x` and `e^{-x}`.
    fn scaled_alpha2_prime(&self, x: f64) -> f64 {
        let s: f64 = self
            .log_odds
            .iter()
            .map(|&r| {
                let s = sigmoid(x + r);
                s * s
            })
            .sum();
        -s / self.n2
    }

    /// `log alpha_1(x)` and `log alpha_2(x)`.
    fn log_alpha(&self, x: f64) -> (f64, f64) {
        let l1 = log_sum_exp(self.log_odds.iter().map(|&r| log_sigmoid(-(x + r))));
        let l2 = log_sum_exp(self.log_odds.iter().map(|&r| log_sigmoid(x + r)));
        (l1 - self.n1.ln(), l2 - x - self.n2.ln())
    }

    /// Intercept update `phi(x) = log(alpha_1(x) / alpha_2(x))`: the line
    /// with intercept `x` is mapped onto the line with intercept `phi(x)`.
    pub fn phi(&self, x: f64) -> Result<f64> {
        Self::check_x(x)?;
        let (l1, l2) = self.log_alpha(x);
        Self::finite(l1 - l2, "phi")
    }

    /// `g(x) = alpha_2(x) / alpha_1(x)`, non-increasing in `x`.
    pub fn g(&self, x: f64) -> Result<f64> {
        Self::check_x(x)?;
        let (l1, l2) = self.log_alpha(x);
        Self::finite((l2 - l1).exp(), "g")
    }

    /// `h(x) = alpha_2'(x) alpha_1(x) - alpha_1'(x) alpha_2(x)`, never positive.
    pub fn h(&self, x: f64) -> Result<f64> {
        let (a1, a2) = self.alpha(x)?;
        let (d1, d2) = self.alpha_prime(x)?;
        Self::finite(d2 * a1 - d1 * a2, "h")
    }

    /// Solves `alpha_1(b) = 1` by bracket expansion from `[-1, 1]` and
    /// bisection, then fills in the eigenpair at the fixed line.
    pub fn find_intercept(&self, tol: f64) -> Result<FixedLine> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(SucpaError::invalid(format!("tol must be > 0, got {tol}")));
        }
        // alpha_1 - 1 is strictly decreasing: positive on the left of b.
        let excess = |x: f64| -> Result<f64> { Ok(self.alpha1(x) - 1.0) };

        let mut lo = -1.0_f64;
        let mut doublings = 0;
        while excess(lo)? <= 0.0 {
            lo *= 2.0;
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS || !lo.is_finite() {
                return Err(SucpaError::Numeric(
                    "intercept bracket expansion failed on the left".into(),
                ));
            }
        }
        let mut hi = 1.0_f64;
        doublings = 0;
        while excess(hi)? >= 0.0 {
            hi *= 2.0;
            doublings += 1;
            if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
                return Err(SucpaError::Numeric(
                    "intercept bracket expansion failed on the right".into(),
                ));
            }
        }

        let (mut e_lo, mut e_hi) = (excess(lo)?, excess(hi)?);
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let e = excess(mid)?;
            if e == 0.0 {
                lo = mid;
                hi = mid;
                e_lo = e;
                e_hi = e;
                break;
            }
            if e > 0.0 {
                lo = mid;
                e_lo = e;
            } else {
                hi = mid;
                e_hi = e;
            }
            if hi - lo <= tol && e_lo.abs().min(e_hi.abs()) <= tol {
                break;
            }
        }
        let b = if e_lo.abs() <= e_hi.abs() { lo } else { hi };
        Ok(FixedLine {
            intercept_b: b,
            stable_eigenvalue_mu: self.mu_at_fixed_line(b)?,
            stable_eigenvector: self.stable_eigenvector(),
            representative_point: BetaVector::new(vec![0.0, b])?,
        })
    }

    /// `mu = alpha_1'(b) - e^b alpha_2'(b)`, the non-unit eigenvalue of the
    /// Jacobian at any point of the fixed line.
    pub fn mu_at_fixed_line(&self, b: f64) -> Result<f64> {
        Self::check_x(b)?;
        let (d1, _) = self.alpha_prime(b)?;
        Ok(d1 - self.scaled_alpha2_prime(b))
    }

    /// Unit vector along `[N_2, -N_1]`.
    pub fn stable_eigenvector(&self) -> [f64; 2] {
        let norm = self.n1.hypot(self.n2);
        [self.n2 / norm, -self.n1 / norm]
    }

    /// Limit of `delta_2 / delta_1` along converging orbits, `-N_1 / N_2`.
    pub fn limiting_slope(&self) -> f64 {
        -self.n1 / self.n2
    }

    /// Iterates `phi` from `x0` until successive intercepts differ by at most
    /// `tol` or `max_steps` is reached. The start is included.
    pub fn intercept_sequence(&self, x0: f64, tol: f64, max_steps: usize) -> Result<Vec<f64>> {
        let mut seq = vec![x0];
        let mut x = x0;
        for _ in 0..max_steps {
            let next = self.phi(x)?;
            seq.push(next);
            if (next - x).abs() <= tol {
                break;
            }
            x = next;
        }
        Ok(seq)
    }

    /// Identity `N_1 alpha_1(x) + N_2 e^x alpha_2(x) - N`, zero up to round-off.
    pub fn alpha_identity_residual(&self, x: f64) -> Result<f64> {
        let (a1, _) = self.alpha(x)?;
        let s2: f64 = self.log_odds.iter().map(|&r| sigmoid(x + r)).sum();
        // N_2 e^x alpha_2(x) = sum_i sigmoid(x + r_i)
        Ok(self.n1 * a1 + s2 - self.n())
    }
}

/// `delta_2(t) / delta_1(t)` at the last step where `|delta_1|` is above
/// [`SLOPE_RESOLUTION`]. The orbit must have converged.
pub fn slope_limit_check(problem: &TwoClassProblem, orbit: &Orbit) -> Result<f64> {
    if orbit.dim() != problem.problem().k() {
        return Err(SucpaError::invalid(
            "slope check needs a two-dimensional orbit",
        ));
    }
    if !orbit.converged() {
        return Err(SucpaError::invalid("slope check needs a converged orbit"));
    }
    orbit
        .increments()
        .iter()
        .rev()
        .find(|d| d[0].abs() > SLOPE_RESOLUTION)
        .map(|d| d[1] / d[0])
        .ok_or(SucpaError::NoUsableStep)
}

/// Per-step `delta_2 / delta_1`, `None` where `delta_1` is not resolvable.
pub fn slope_trace(orbit: &Orbit) -> Vec<Option<f64>> {
    orbit
        .increments()
        .iter()
        .map(|d| (d[0].abs() > SLOPE_RESOLUTION).then(|| d[1] / d[0]))
        .collect()
}

/// Number of increments with `|delta_1|` above [`SLOPE_RESOLUTION`].
pub fn resolvable_steps(orbit: &Orbit) -> usize {
    slope_trace(orbit).iter().filter(|s| s.is_some()).count()
}

/// Which side of the line `beta_2 - beta_1 = b` a point lies on: `1` above,
/// `-1` below, `0` within `dead_zone` of it.
pub fn side_of_line(beta: &[f64], b: f64, dead_zone: f64) -> i8 {
    let d = beta[1] - beta[0] - b;
    if d > dead_zone {
        1
    } else if d < -dead_zone {
        -1
    } else {
        0
    }
}

/// True when the orbit visits both open half-planes of the fixed line.
/// Points within `dead_zone` of the line are ignored.
pub fn crosses_fixed_line(orbit: &Orbit, b: f64, dead_zone: f64) -> bool {
    let sides: Vec<i8> = orbit
        .points()
        .iter()
        .map(|p| side_of_line(p, b, dead_zone))
        .filter(|&s| s != 0)
        .collect();
    sides.windows(2).any(|w| w[0] != w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{ClassCounts, PosteriorMatrix};

    fn make(rows: &[[f64; 2]], counts: [u64; 2]) -> TwoClassProblem {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        let p = PosteriorMatrix::from_rows(&rows).unwrap();
        let c = ClassCounts::new(counts.to_vec()).unwrap();
        TwoClassProblem::new(SucpaProblem::new(p, c).unwrap()).unwrap()
    }

    fn two_by_two() -> TwoClassProblem {
        make(&[[0.8, 0.2], [0.3, 0.7]], [1, 1])
    }

    fn symmetric() -> TwoClassProblem {
        make(
            &[[0.9, 0.1], [0.1, 0.9], [0.35, 0.65], [0.65, 0.35]],
            [2, 2],
        )
    }

    #[test]
    fn log_sigmoid_matches_direct() {
        for &t in &[-30.0, -2.0, 0.0, 0.5, 40.0] {
            assert!((log_sigmoid(t) - sigmoid(t).ln()).abs() < 1e-14, "{t}");
        }
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
    }

    #[test]
    fn alpha_at_zero_for_2x2() {
        let (a1, a2) = two_by_two().alpha(0.0).unwrap();
        assert!((a1 - 1.1).abs() < 1e-15);
        assert!((a2 - 0.9).abs() < 1e-15);
    }

    #[test]
    fn alpha_limits() {
        let p = two_by_two();
        let (a1, _) = p.alpha(-40.0).unwrap();
        assert!((a1 - 2.0).abs() <= 1e-6);
        let (a1, _) = p.alpha(40.0).unwrap();
        assert!(a1 <= 1e-6 * 2.0);
    }

    #[test]
    fn symmetric_derivatives_agree() {
        // Mirror-symmetric log-odds give alpha_1(x) = e^-x alpha_2(-x).
        let p = symmetric();
        let (d1, d2) = p.alpha_prime(0.0).unwrap();
        let (_, a2) = p.alpha(0.0).unwrap();
        assert!((d1 + a2 + d2).abs() < 1e-15);
        assert!(d1 < 0.0 && d2 < 0.0);
    }

    #[test]
    fn phi_at_zero_for_2x2() {
        let v = two_by_two().phi(0.0).unwrap();
        assert!((v - (11.0f64 / 9.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn intercept_of_2x2_has_closed_form() {
        // alpha_1(b) = 1 reduces to 0.14 y^2 = 0.24 with y = e^b.
        let line = two_by_two().find_intercept(1e-12).unwrap();
        let exact = 0.5 * (12.0f64 / 7.0).ln();
        assert!((line.intercept_b - exact).abs() < 1e-11);
        assert_eq!(line.representative_point[0], 0.0);
    }

    #[test]
    fn symmetric_intercept_is_zero() {
        let line = symmetric().find_intercept(1e-12).unwrap();
        assert!(line.intercept_b.abs() <= 1e-12);
        let v = line.stable_eigenvector;
        assert!((v[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((v[1] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn phi_fixes_intercept_and_sandwiches() {
        let p = two_by_two();
        let b = p.find_intercept(1e-12).unwrap().intercept_b;
        assert!((p.phi(b).unwrap() - b).abs() <= 1e-8);
        let y = p.phi(b + 5.0).unwrap();
        assert!(y >= b - 1e-12 && y < b + 5.0);
        let y = p.phi(b - 5.0).unwrap();
        assert!(y <= b + 1e-12 && y > b - 5.0);
    }

    #[test]
    fn g_and_h_signs() {
        let p = symmetric();
        for i in -20..20 {
            let x = i as f64 * 0.5;
            assert!(p.h(x).unwrap() <= 0.0);
            assert!(p.g(x).unwrap() >= p.g(x + 0.5).unwrap() - 1e-12);
        }
    }

    #[test]
    fn identical_rows_give_zero_mu() {
        let p = make(&[[0.3, 0.7], [0.3, 0.7], [0.3, 0.7]], [1, 2]);
        let line = p.find_intercept(1e-12).unwrap();
        assert!(line.stable_eigenvalue_mu.abs() < 1e-10);
    }

    #[test]
    fn rejects_non_finite_x() {
        let p = two_by_two();
        assert!(p.alpha(f64::NAN).is_err());
        assert!(p.phi(f64::INFINITY).is_err());
        assert!(p.find_intercept(0.0).is_err());
    }

    #[test]
    fn slope_check_needs_motion() {
        let p = make(&[[0.5, 0.5]; 4], [2, 2]);
        let orbit =
            crate::map::iterate_orbit(p.problem(), BetaVector::zeros(2), 1e-9, 100).unwrap();
        assert!(matches!(
            slope_limit_check(&p, &orbit),
            Err(SucpaError::NoUsableStep)
        ));
    }

    #[test]
    fn side_of_line_dead_zone() {
        assert_eq!(side_of_line(&[0.0, 1.0], 0.5, 1e-10), 1);
        assert_eq!(side_of_line(&[0.0, 0.0], 0.5, 1e-10), -1);
        assert_eq!(side_of_line(&[0.0, 0.5], 0.5, 1e-10), 0);
    }
}
