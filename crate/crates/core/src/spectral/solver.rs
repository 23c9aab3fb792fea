//! Eigen-solvers for SUCPA Jacobians, selectable by name.
//!
//! Every Jacobian of the map is a reversible stochastic matrix: with the
//! calibrated posteriors `Q` and `pi_k = sum_i Q_ik`, the product
//! `pi_k J_kl = sum_i Q_ik Q_il` is symmetric in `k, l`. Conjugating by
//! `diag(sqrt(pi))` therefore yields a symmetric positive semi-definite
//! matrix with the same spectrum, so all eigenvalues are real and lie in
//! `[0, 1]`. The iterative solvers work on that symmetric form and map the
//! eigenvectors back with `diag(pi)^{-1/2}`.

use std::fmt;

use crate::error::{Result, SucpaError};
use crate::numerics::{dot, norm2};

/// Largest class count the iterative solvers accept.
pub const MAX_CLASSES: usize = 16;

/// A Jacobian plus the stationary weights that symmetrize it.
#[derive(Debug, Clone)]
pub struct SpectralInput<'a> {
    pub k: usize,
    /// Row-major `K x K` Jacobian.
    pub jacobian: &'a [f64],
    /// Stationary distribution `pi`, normalized to sum to one.
    pub stationary: &'a [f64],
}

impl SpectralInput<'_> {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.jacobian[r * self.k + c]
    }

    /// `diag(sqrt(pi)) J diag(sqrt(pi))^{-1}`, symmetrized.
    pub fn symmetric_form(&self) -> Vec<f64> {
        let k = self.k;
        let sq: Vec<f64> = self.stationary.iter().map(|p| p.sqrt()).collect();
        let mut s = vec![0.0; k * k];
        for r in 0..k {
            for c in 0..k {
                s[r * k + c] = sq[r] * self.at(r, c) / sq[c];
            }
        }
        for r in 0..k {
            for c in r + 1..k {
                let avg = 0.5 * (s[r * k + c] + s[c * k + r]);
                s[r * k + c] = avg;
                s[c * k + r] = avg;
            }
        }
        s
    }

    /// Maps an eigenvector of the symmetric form back to one of `J`, unit
    /// length.
    fn to_jacobian_vector(&self, v: &[f64]) -> Vec<f64> {
        let mut u: Vec<f64> = v
            .iter()
            .zip(self.stationary)
            .map(|(x, p)| x / p.sqrt())
            .collect();
        normalize(&mut u);
        u
    }
}

/// One real eigenpair; the vector is a right eigenvector of `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// A strategy for computing the full eigen-decomposition of a Jacobian.
pub trait EigenSolver: Send + Sync {
    /// Registry key.
    fn name(&self) -> &'static str;

    fn supports(&self, k: usize) -> bool;

    /// All `K` eigenpairs, in any order.
    fn decompose(&self, input: &SpectralInput<'_>) -> Result<Vec<EigenPair>>;
}

impl fmt::Debug for dyn EigenSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EigenSolver({})", self.name())
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Closed-form roots of the characteristic quadratic; `K = 2` only.
#[derive(Debug, Default, Clone, Copy)]
pub struct QuadraticSolver;

impl EigenSolver for QuadraticSolver {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn supports(&self, k: usize) -> bool {
        k == 2
    }

    fn decompose(&self, input: &SpectralInput<'_>) -> Result<Vec<EigenPair>> {
        if input.k != 2 {
            return Err(SucpaError::invalid("quadratic solver needs K = 2"));
        }
        let (a, b, c, d) = (
            input.at(0, 0),
            input.at(0, 1),
            input.at(1, 0),
            input.at(1, 1),
        );
        let half_trace = 0.5 * (a + d);
        let half_diff = 0.5 * (a - d);
        let disc = half_diff * half_diff + b * c;
        if disc < 0.0 {
            return Err(SucpaError::Numeric(format!(
                "2x2 Jacobian has complex eigenvalues (discriminant {disc})"
            )));
        }
        let root = disc.sqrt();
        let pair = |lambda: f64| {
            // Null vector of J - lambda I from whichever row is better conditioned.
            let v1 = [b, lambda - a];
            let v2 = [lambda - d, c];
            let mut v = if norm2(&v1) >= norm2(&v2) { v1 } else { v2 };
            if v == [0.0, 0.0] {
                v = [1.0, 0.0];
            }
            normalize(&mut v);
            EigenPair {
                value: lambda,
                vector: v.to_vec(),
            }
        };
        Ok(vec![pair(half_trace + root), pair(half_trace - root)])
    }
}

/// Power iteration for the dominant pair, then repeated power iteration on
/// the orthogonal complement of the pairs already found.
#[derive(Debug, Clone, Copy)]
pub struct PowerDeflationSolver {
    pub max_iterations: usize,
    /// Residual `||S x - lambda x||` at which an eigenpair is accepted.
    pub residual_tol: f64,
}

impl Default for PowerDeflationSolver {
    fn default() -> Self {
        PowerDeflationSolver {
            max_iterations: 200_000,
            residual_tol: 1e-13,
        }
    }
}

/// Residual level accepted when iteration stalls on a near-degenerate
/// cluster. The Rayleigh quotient error is bounded by the residual.
const STALL_ACCEPT: f64 = 1e-9;

fn mat_vec(s: &[f64], k: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(&s[r * k..(r + 1) * k], x);
    }
}

fn project_out(x: &mut [f64], basis: &[Vec<f64>]) {
    // Two passes of classical Gram-Schmidt.
    for _ in 0..2 {
        for b in basis {
            let c = dot(x, b);
            x.iter_mut().zip(b).for_each(|(xi, bi)| *xi -= c * bi);
        }
    }
}

impl PowerDeflationSolver {
    fn start_vector(k: usize, m: usize, basis: &[Vec<f64>]) -> Vec<f64> {
        // Deterministic, non-symmetric start; falls back to unit vectors when
        // it lies in the span already found.
        let mut x: Vec<f64> = (0..k)
            .map(|j| 1.0 + 0.37 * (((j * 7 + m * 3) % (k + 1)) as f64) + 0.01 * j as f64)
            .collect();
        project_out(&mut x, basis);
        if norm2(&x) < 1e-8 {
            let mut best = (0.0, vec![0.0; k]);
            for j in 0..k {
                let mut e = vec![0.0; k];
                e[j] = 1.0;
                project_out(&mut e, basis);
                let n = norm2(&e);
                if n > best.0 {
                    best = (n, e);
                }
            }
            x = best.1;
        }
        normalize(&mut x);
        x
    }

    fn dominant(&self, s: &[f64], k: usize, basis: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        let mut x = Self::start_vector(k, basis.len(), basis);
        let mut y = vec![0.0; k];
        let mut best_residual = f64::INFINITY;
        let mut last_improvement = 0;
        let mut lambda = 0.0;
        for it in 0..self.max_iterations {
            mat_vec(s, k, &x, &mut y);
            project_out(&mut y, basis);
            lambda = dot(&x, &y);
            let residual = y
                .iter()
                .zip(&x)
                .map(|(yi, xi)| (yi - lambda * xi).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= self.residual_tol {
                return Ok((lambda, x));
            }
            if residual < 0.5 * best_residual {
                best_residual = residual;
                last_improvement = it;
            } else if it - last_improvement > 5_000 && best_residual <= STALL_ACCEPT {
                return Ok((lambda, x));
            }
            let ny = norm2(&y);
            if ny == 0.0 {
                // Remaining block is numerically zero.
                return Ok((0.0, x));
            }
            y.iter_mut().for_each(|v| *v /= ny);
            std::mem::swap(&mut x, &mut y);
        }
        if best_residual <= STALL_ACCEPT {
            Ok((lambda, x))
        } else {
            Err(SucpaError::Numeric(format!(
                "power iteration did not converge after {} iterations (residual {best_residual:e})",
                self.max_iterations
            )))
        }
    }
}

impl EigenSolver for PowerDeflationSolver {
    fn name(&self) -> &'static str {
        "power-deflation"
    }

    fn supports(&self, k: usize) -> bool {
        (2..=MAX_CLASSES).contains(&k)
    }

    fn decompose(&self, input: &SpectralInput<'_>) -> Result<Vec<EigenPair>> {
        let k = input.k;
        let s = input.symmetric_form();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut pairs = Vec::with_capacity(k);
        for _ in 0..k {
            let (value, v) = self.dominant(&s, k, &basis)?;
            pairs.push(EigenPair {
                value,
                vector: input.to_jacobian_vector(&v),
            });
            basis.push(v);
        }
        Ok(pairs)
    }
}

/// Cyclic Jacobi rotations on the symmetric form.
#[derive(Debug, Clone, Copy)]
pub struct JacobiSolver {
    pub max_sweeps: usize,
}

impl Default for JacobiSolver {
    fn default() -> Self {
        JacobiSolver { max_sweeps: 100 }
    }
}

impl EigenSolver for JacobiSolver {
    fn name(&self) -> &'static str {
        "jacobi"
    }

    fn supports(&self, k: usize) -> bool {
        (2..=MAX_CLASSES).contains(&k)
    }

    fn decompose(&self, input: &SpectralInput<'_>) -> Result<Vec<EigenPair>> {
        let k = input.k;
        let mut a = input.symmetric_form();
        let mut v = vec![0.0; k * k];
        for i in 0..k {
            v[i * k + i] = 1.0;
        }
        let scale: f64 = a
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let mut converged = false;
        for _ in 0..self.max_sweeps {
            let off: f64 = (0..k)
                .flat_map(|r| (0..k).filter(move |&c| c != r).map(move |c| (r, c)))
                .map(|(r, c)| a[r * k + c].powi(2))
                .sum::<f64>()
                .sqrt();
            if off <= 1e-15 * scale {
                converged = true;
                break;
            }
            for p in 0..k {
                for q in p + 1..k {
                    let apq = a[p * k + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a[q * k + q] - a[p * k + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for r in 0..k {
                        let arp = a[r * k + p];
                        let arq = a[r * k + q];
                        a[r * k + p] = c * arp - s * arq;
                        a[r * k + q] = s * arp + c * arq;
                    }
                    for r in 0..k {
                        let apr = a[p * k + r];
                        let aqr = a[q * k + r];
                        a[p * k + r] = c * apr - s * aqr;
                        a[q * k + r] = s * apr + c * aqr;
                    }
                    for r in 0..k {
                        let vrp = v[r * k + p];
                        let vrq = v[r * k + q];
                        v[r * k + p] = c * vrp - s * vrq;
                        v[r * k + q] = s * vrp + c * vrq;
                    }
                }
            }
        }
        if !converged {
            return Err(SucpaError::Numeric(format!(
                "Jacobi rotations did not converge in {} sweeps",
                self.max_sweeps
            )));
        }
        Ok((0..k)
            .map(|j| {
                let col: Vec<f64> = (0..k).map(|r| v[r * k + j]).collect();
                EigenPair {
                    value: a[j * k + j],
                    vector: input.to_jacobian_vector(&col),
                }
            })
            .collect())
    }
}

/// Named collection of [`EigenSolver`]s.
pub struct SolverRegistry {
    solvers: Vec<Box<dyn EigenSolver>>,
}

impl fmt::Debug for SolverRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl Default for SolverRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl SolverRegistry {
    pub fn empty() -> Self {
        SolverRegistry {
            solvers: Vec::new(),
        }
    }

    /// `quadratic`, `power-deflation` and `jacobi`.
    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        r.solvers.push(Box::new(QuadraticSolver));
        r.solvers.push(Box::new(PowerDeflationSolver::default()));
        r.solvers.push(Box::new(JacobiSolver::default()));
        r
    }

    pub fn register(&mut self, solver: Box<dyn EigenSolver>) -> Result<()> {
        if self.get(solver.name()).is_some() {
            return Err(SucpaError::invalid(format!(
                "eigen-solver '{}' is already registered",
                solver.name()
            )));
        }
        self.solvers.push(solver);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn EigenSolver> {
        self.solvers
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.solvers.iter().map(|s| s.name())
    }

    /// Quadratic for `K = 2`, power iteration with deflation otherwise.
    pub fn default_for(&self, k: usize) -> Result<&dyn EigenSolver> {
        let preferred = if k == 2 {
            "quadratic"
        } else {
            "power-deflation"
        };
        self.get(preferred)
            .filter(|s| s.supports(k))
            .or_else(|| {
                self.solvers
                    .iter()
                    .map(|s| s.as_ref())
                    .find(|s| s.supports(k))
            })
            .ok_or_else(|| {
                SucpaError::invalid(format!("no registered eigen-solver supports K = {k}"))
            })
    }

    /// Resolves `"auto"` or a registered name for dimension `k`.
    pub fn select(&self, name: &str, k: usize) -> Result<&dyn EigenSolver> {
        if name == "auto" {
            return self.default_for(k);
        }
        let solver = self.get(name).ok_or_else(|| {
            let known: Vec<_> = self.names().collect();
            SucpaError::invalid(format!(
                "unknown eigen-solver '{name}' (known: auto, {})",
                known.join(", ")
            ))
        })?;
        if !solver.supports(k) {
            return Err(SucpaError::invalid(format!(
                "eigen-solver '{name}' does not support K = {k}"
            )));
        }
        Ok(solver)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_values(mut pairs: Vec<EigenPair>) -> Vec<f64> {
        pairs.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap());
        pairs.into_iter().map(|p| p.value).collect()
    }

    // Reversible 3-state chain built from a symmetric weight matrix.
    fn reversible_3() -> (Vec<f64>, Vec<f64>) {
        let w = [[0.5, 0.2, 0.1], [0.2, 0.3, 0.15], [0.1, 0.15, 0.4]];
        let pi: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
        let mut j = vec![0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                j[r * 3 + c] = w[r][c] / pi[r];
            }
        }
        let total: f64 = pi.iter().sum();
        (j, pi.iter().map(|p| p / total).collect())
    }

    #[test]
    fn iterative_solvers_agree() {
        let (j, pi) = reversible_3();
        let input = SpectralInput {
            k: 3,
            jacobian: &j,
            stationary: &pi,
        };
        let a = sorted_values(PowerDeflationSolver::default().decompose(&input).unwrap());
        let b = sorted_values(JacobiSolver::default().decompose(&input).unwrap());
        assert!((a[0] - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn quadratic_unit_pair() {
        let j = [0.7, 0.3, 0.4, 0.6];
        let pi = [4.0 / 7.0, 3.0 / 7.0];
        let input = SpectralInput {
            k: 2,
            jacobian: &j,
            stationary: &pi,
        };
        let pairs = QuadraticSolver.decompose(&input).unwrap();
        assert!((pairs[0].value - 1.0).abs() < 1e-15);
        assert!((pairs[1].value - 0.3).abs() < 1e-15);
        let v = &pairs[0].vector;
        assert!((v[0] - v[1]).abs() < 1e-15);
    }

    #[test]
    fn registry_lookup() {
        let reg = SolverRegistry::with_builtin();
        assert_eq!(reg.default_for(2).unwrap().name(), "quadratic");
        assert_eq!(reg.default_for(5).unwrap().name(), "power-deflation");
        assert_eq!(reg.select("jacobi", 3).unwrap().name(), "jacobi");
        assert!(reg.select("quadratic", 3).is_err());
        assert!(reg.select("lanczos", 3).is_err());
        assert!(reg.default_for(17).is_err());
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut reg = SolverRegistry::with_builtin();
        assert!(reg.register(Box::new(JacobiSolver::default())).is_err());
    }
}
