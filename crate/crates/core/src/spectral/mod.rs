//! Jacobian of the SUCPA map and its spectral structure.
//!
//! With calibrated posteriors `Q_ik = P_ik e^{beta_k} / sum_j P_ij e^{beta_j}`
//! the Jacobian reduces to
//!
//! ```text
//! J_kl = sum_i Q_ik Q_il / sum_i Q_ik
//! ```
//!
//! so every row sums to one and every entry is positive: `J` is a regular
//! transition matrix, with the simple eigenvalue 1 on the direction `1` and
//! all other eigenvalues strictly inside the unit disc.

pub mod solver;

use num_complex::Complex64;

use crate::error::{Result, SucpaError};
use crate::map::{calibrated_matrix, sucpa_step};
use crate::numerics::abs_cosine;
use crate::problem::{BetaVector, SucpaProblem};

pub use solver::{
    EigenPair, EigenSolver, JacobiSolver, PowerDeflationSolver, QuadraticSolver, SolverRegistry,
    SpectralInput, MAX_CLASSES,
};

/// Eigenvalues closer than this to modulus one count as unit eigenvalues.
pub const UNIT_EIGENVALUE_TOL: f64 = 1e-8;

/// Row-major `K x K` Jacobian together with the point it was evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    k: usize,
    entries: Vec<f64>,
    evaluation_point: BetaVector,
}

impl JacobianMatrix {
    pub fn from_entries(k: usize, entries: Vec<f64>, evaluation_point: BetaVector) -> Result<Self> {
        if entries.len() != k * k || evaluation_point.len() != k {
            return Err(SucpaError::ShapeMismatch {
                expected: format!("{k}x{k} matrix at a {k}-vector"),
                got: format!(
                    "{} entries at a {}-vector",
                    entries.len(),
                    evaluation_point.len()
                ),
            });
        }
        Ok(JacobianMatrix {
            k,
            entries,
            evaluation_point,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.k + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.entries[r * self.k..(r + 1) * self.k]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn evaluation_point(&self) -> &BetaVector {
        &self.evaluation_point
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max_k |sum_l J_kl - 1|`, i.e. `||J 1 - 1||_inf`.
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.k)
            .map(|r| (self.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &JacobianMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Column sums of the calibrated posteriors, normalized to sum to one: the
/// stationary distribution of the Jacobian at `beta`.
pub fn stationary_weights(problem: &SucpaProblem, beta: &BetaVector) -> Result<Vec<f64>> {
    problem.check_beta(beta)?;
    let k = problem.k();
    let q = calibrated_matrix(problem, beta);
    let mut pi = vec![0.0; k];
    for row in q.chunks_exact(k) {
        pi.iter_mut().zip(row).for_each(|(p, x)| *p += x);
    }
    let total: f64 = pi.iter().sum();
    if pi.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(SucpaError::overflow("calibrated column mass underflowed"));
    }
    Ok(pi.into_iter().map(|p| p / total).collect())
}

/// Analytic Jacobian of the map at `beta`.
pub fn jacobian(problem: &SucpaProblem, beta: &BetaVector) -> Result<JacobianMatrix> {
    problem.check_beta(beta)?;
    let k = problem.k();
    let q = calibrated_matrix(problem, beta);
    let mut mass = vec![0.0; k];
    let mut cross = vec![0.0; k * k];
    for row in q.chunks_exact(k) {
        for r in 0..k {
            mass[r] += row[r];
            for c in 0..k {
                cross[r * k + c] += row[r] * row[c];
            }
        }
    }
    for r in 0..k {
        if !(mass[r] > 0.0 && mass[r].is_finite()) {
            return Err(SucpaError::overflow(format!(
                "calibrated mass of class {r} is {}",
                mass[r]
            )));
        }
        for c in 0..k {
            cross[r * k + c] /= mass[r];
        }
    }
    JacobianMatrix::from_entries(k, cross, beta.clone())
}

/// Central-difference approximation of the Jacobian with step `h`.
pub fn finite_difference_jacobian(
    problem: &SucpaProblem,
    beta: &BetaVector,
    h: f64,
) -> Result<JacobianMatrix> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SucpaError::invalid(format!("step h must be > 0, got {h}")));
    }
    problem.check_beta(beta)?;
    let k = problem.k();
    let mut entries = vec![0.0; k * k];
    for c in 0..k {
        let mut plus = beta.to_vec();
        let mut minus = beta.to_vec();
        plus[c] += h;
        minus[c] -= h;
        let fp = sucpa_step(problem, &BetaVector::new(plus)?)?;
        let fm = sucpa_step(problem, &BetaVector::new(minus)?)?;
        for r in 0..k {
            entries[r * k + c] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    JacobianMatrix::from_entries(k, entries, beta.clone())
}

/// Local stability type of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hyperbolicity {
    /// One simple unit eigenvalue along `1`, everything else strictly
    /// contracting: no unstable directions and a one-dimensional center
    /// direction.
    NonHyperbolicWithCenterLine,
    /// The numerically computed spectrum does not have that structure.
    Unresolved,
}

impl std::fmt::Display for Hyperbolicity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Hyperbolicity::NonHyperbolicWithCenterLine => "non-hyperbolic-with-center-line",
            Hyperbolicity::Unresolved => "unresolved",
        })
    }
}

/// Eigen-structure of a Jacobian.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Sorted by modulus, largest first.
    pub eigenvalues: Vec<Complex64>,
    /// Unit right eigenvectors, matching `eigenvalues`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// `||J 1 - 1||_inf`.
    pub unit_eigenvector_check: f64,
    /// `|cos|` between the dominant eigenvector and `1`.
    pub perron_cosine: f64,
    /// Eigenvalues within [`UNIT_EIGENVALUE_TOL`] of modulus one.
    pub unit_eigenvalue_count: usize,
    pub subdominant_modulus: f64,
    /// Eigenvectors of the strictly contracting eigenvalues.
    pub stable_subspace_basis: Vec<Vec<f64>>,
    pub classification: Hyperbolicity,
    pub solver: &'static str,
}

impl SpectralReport {
    pub fn spectral_gap(&self) -> f64 {
        1.0 - self.subdominant_modulus
    }
}

/// Spectral report using the registry's default solver for `K`.
pub fn spectral_report(jac: &JacobianMatrix, problem: &SucpaProblem) -> Result<SpectralReport> {
    let registry = SolverRegistry::with_builtin();
    spectral_report_with(jac, problem, registry.default_for(jac.k())?)
}

pub fn spectral_report_with(
    jac: &JacobianMatrix,
    problem: &SucpaProblem,
    solver: &dyn EigenSolver,
) -> Result<SpectralReport> {
    let k = jac.k();
    if k != problem.k() {
        return Err(SucpaError::ShapeMismatch {
            expected: format!("{}x{} Jacobian", problem.k(), problem.k()),
            got: format!("{k}x{k}"),
        });
    }
    if k > MAX_CLASSES {
        return Err(SucpaError::invalid(format!(
            "spectral analysis supports at most {MAX_CLASSES} classes, got {k}"
        )));
    }
    if !solver.supports(k) {
        return Err(SucpaError::invalid(format!(
            "eigen-solver '{}' does not support K = {k}",
            solver.name()
        )));
    }
    let pi = stationary_weights(problem, jac.evaluation_point())?;
    let input = SpectralInput {
        k,
        jacobian: jac.entries(),
        stationary: &pi,
    };
    let mut pairs = solver.decompose(&input)?;
    if pairs.len() != k || pairs.iter().any(|p| !p.value.is_finite()) {
        return Err(SucpaError::Numeric(format!(
            "eigen-solver '{}' returned an incomplete spectrum",
            solver.name()
        )));
    }
    pairs.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()));

    let ones = vec![1.0; k];
    let perron_cosine = abs_cosine(&pairs[0].vector, &ones);
    let unit_eigenvalue_count = pairs
        .iter()
        .filter(|p| (p.value.abs() - 1.0).abs() <= UNIT_EIGENVALUE_TOL)
        .count();
    let subdominant_modulus = pairs[1].value.abs();
    let leading_is_unit = (pairs[0].value.abs() - 1.0).abs() <= UNIT_EIGENVALUE_TOL;
    let classification = if leading_is_unit
        && unit_eigenvalue_count == 1
        && perron_cosine >= 1.0 - UNIT_EIGENVALUE_TOL
        && subdominant_modulus < 1.0
    {
        Hyperbolicity::NonHyperbolicWithCenterLine
    } else {
        Hyperbolicity::Unresolved
    };

    Ok(SpectralReport {
        eigenvalues: pairs.iter().map(|p| Complex64::new(p.value, 0.0)).collect(),
        stable_subspace_basis: pairs[1..]
            .iter()
            .filter(|p| p.value.abs() < 1.0 - UNIT_EIGENVALUE_TOL)
            .map(|p| p.vector.clone())
            .collect(),
        eigenvectors: pairs.into_iter().map(|p| p.vector).collect(),
        unit_eigenvector_check: jac.row_sum_defect(),
        perron_cosine,
        unit_eigenvalue_count,
        subdominant_modulus,
        classification,
        solver: solver.name(),
    })
}
