//! Problem data: posterior score matrices, target class counts and points in
//! bias space.

use std::fmt;
use std::ops::Deref;

use crate::error::{Result, SucpaError};

/// Entries below this are treated as zero and rejected.
pub const POSITIVITY_THRESHOLD: f64 = 1e-300;

/// Allowed deviation of a row sum from one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// An `N x K` row-stochastic matrix of strictly positive class scores,
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl PosteriorMatrix {
    /// Builds a matrix from row-major data, checking positivity and row sums.
    pub fn new(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(SucpaError::invalid(format!(
                "posterior matrix must be non-empty, got {n}x{k}"
            )));
        }
        if data.len() != n * k {
            return Err(SucpaError::ShapeMismatch {
                expected: format!("{} entries ({n}x{k})", n * k),
                got: format!("{} entries", data.len()),
            });
        }
        let m = PosteriorMatrix { n, k, data };
        m.validate()?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(SucpaError::ShapeMismatch {
                    expected: format!("{k} columns"),
                    got: format!("{} columns in row {i}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(n, k, data)
    }

    fn validate(&self) -> Result<()> {
        for (i, row) in self.rows().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    return Err(SucpaError::invalid(format!(
                        "row {i}, column {j}: non-finite entry {p}"
                    )));
                }
                if p < POSITIVITY_THRESHOLD {
                    return Err(SucpaError::invalid(format!(
                        "row {i}, column {j}: entry {p} is not strictly positive"
                    )));
                }
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(SucpaError::invalid(format!(
                    "row {i} sums to {s}, expected 1"
                )));
            }
        }
        Ok(())
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of classes.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.k)
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.k + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Column sums, i.e. the aggregate score mass per class.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.k];
        for row in self.rows() {
            for (s, p) in sums.iter_mut().zip(row) {
                *s += p;
            }
        }
        sums
    }
}

/// Target class counts `N_1..N_K`, all at least one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts(Vec<u64>);

impl ClassCounts {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(SucpaError::invalid(format!(
                "need at least 2 classes, got {}",
                counts.len()
            )));
        }
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(SucpaError::invalid(format!(
                "class {k} has a zero target count; every class needs N_k >= 1"
            )));
        }
        Ok(ClassCounts(counts))
    }

    /// Integer counts summing to `n` in proportion to `weights`, by largest
    /// remainder. Every class receives at least one sample.
    pub fn from_proportions(weights: &[f64], n: u64) -> Result<Self> {
        let k = weights.len();
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(SucpaError::invalid(
                "class proportions must be positive and finite",
            ));
        }
        if n < k as u64 {
            return Err(SucpaError::invalid(format!(
                "cannot give {k} classes at least one of {n} samples"
            )));
        }
        let total: f64 = weights.iter().sum();
        let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
        let mut counts: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let assigned: u64 = counts.iter().sum();
        for &j in order.iter().cycle().take((n - assigned) as usize) {
            counts[j] += 1;
        }
        while let Some(z) = counts.iter().position(|&c| c == 0) {
            let donor = (0..k)
                .max_by_key(|&j| (counts[j], std::cmp::Reverse(j)))
                .unwrap();
            counts[donor] -= 1;
            counts[z] += 1;
        }
        Self::new(counts)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

/// A point in bias space. Every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVector(Vec<f64>);

impl BetaVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(SucpaError::invalid(format!(
                "beta[{j}] = {} is not finite",
                values[j]
            )));
        }
        Ok(BetaVector(values))
    }

    pub fn zeros(k: usize) -> Self {
        BetaVector(vec![0.0; k])
    }

    /// `self + lambda * 1`.
    pub fn shifted(&self, lambda: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|b| b + lambda).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Max-norm distance to another point of the same dimension.
    pub fn max_abs_diff(&self, other: &BetaVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Deref for BetaVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Display for BetaVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (j, v) in self.0.iter().enumerate() {
            if j > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Posterior scores together with the target class counts.
///
/// Immutable after construction. The element-wise logarithm of the scores is
/// cached because every map evaluation works in the log domain.
#[derive(Debug, Clone)]
pub struct SucpaProblem {
    posteriors: PosteriorMatrix,
    counts: ClassCounts,
    log_posteriors: Vec<f64>,
}

impl SucpaProblem {
    pub fn new(posteriors: PosteriorMatrix, counts: ClassCounts) -> Result<Self> {
        if posteriors.k() != counts.k() {
            return Err(SucpaError::ShapeMismatch {
                expected: format!("{} class counts", posteriors.k()),
                got: format!("{}", counts.k()),
            });
        }
        if posteriors.k() < 2 {
            return Err(SucpaError::invalid("need at least 2 classes"));
        }
        if counts.total() != posteriors.n() as u64 {
            return Err(SucpaError::invalid(format!(
                "class counts sum to {}, but the score matrix has {} rows",
                counts.total(),
                posteriors.n()
            )));
        }
        let log_posteriors = posteriors.as_slice().iter().map(|p| p.ln()).collect();
        Ok(SucpaProblem {
            posteriors,
            counts,
            log_posteriors,
        })
    }

    pub fn posteriors(&self) -> &PosteriorMatrix {
        &self.posteriors
    }

    pub fn counts(&self) -> &ClassCounts {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.posteriors.n()
    }

    pub fn k(&self) -> usize {
        self.posteriors.k()
    }

    pub(crate) fn log_row(&self, i: usize) -> &[f64] {
        let k = self.k();
        &self.log_posteriors[i * k..(i + 1) * k]
    }

    pub(crate) fn check_beta(&self, beta: &BetaVector) -> Result<()> {
        if beta.len() != self.k() {
            return Err(SucpaError::ShapeMismatch {
                expected: format!("beta of length {}", self.k()),
                got: format!("length {}", beta.len()),
            });
        }
        Ok(())
    }
}
