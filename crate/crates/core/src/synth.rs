//! Deterministic synthetic score matrices with a controlled prior mismatch.
//!
//! Each sample gets a true class so that class `k` appears exactly `N_k`
//! times, with `N_k` proportional to the requested target priors. Its scores
//! are a flat Dirichlet draw whose true-class logit is raised by
//! `sharpness`. The scores are therefore produced as if the classes were
//! equiprobable, while the target counts follow the requested priors.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Result, SucpaError};
use crate::problem::{ClassCounts, PosteriorMatrix, SucpaProblem};

/// Floor applied to every generated score before renormalizing.
pub const SCORE_FLOOR: f64 = 1e-12;

/// A generated problem together with the true class of each row (zero-based).
#[derive(Debug, Clone)]
pub struct SynthProblem {
    pub problem: SucpaProblem,
    pub labels: Vec<usize>,
}

/// Generates `n` rows over `k` classes. `prior_shift` holds the target class
/// proportions (any positive scale).
pub fn synth_problem(
    seed: u64,
    n: usize,
    k: usize,
    sharpness: f64,
    prior_shift: &[f64],
) -> Result<SynthProblem> {
    if k < 2 || n < k {
        return Err(SucpaError::invalid(format!(
            "synthetic problem needs n >= k >= 2, got n = {n}, k = {k}"
        )));
    }
    if !(sharpness > 0.0 && sharpness.is_finite()) {
        return Err(SucpaError::invalid(format!(
            "sharpness must be positive and finite, got {sharpness}"
        )));
    }
    if prior_shift.len() != k {
        return Err(SucpaError::ShapeMismatch {
            expected: format!("{k} target proportions"),
            got: format!("{}", prior_shift.len()),
        });
    }
    let counts = ClassCounts::from_proportions(prior_shift, n as u64)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = counts
        .as_slice()
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| std::iter::repeat_n(c, m as usize))
        .collect();
    labels.shuffle(&mut rng);

    let mut data = Vec::with_capacity(n * k);
    let mut logits = vec![0.0; k];
    for &label in &labels {
        for (j, l) in logits.iter_mut().enumerate() {
            let g: f64 = Exp1.sample(&mut rng);
            // Exp1 can return exactly 0; keep the log finite.
            *l = g.max(f64::MIN_POSITIVE).ln() + if j == label { sharpness } else { 0.0 };
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut row: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p = (*p / s).max(SCORE_FLOOR));
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
        data.extend_from_slice(&row);
    }

    let posteriors = PosteriorMatrix::new(n, k, data)?;
    Ok(SynthProblem {
        problem: SucpaProblem::new(posteriors, counts)?,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_problem(7, 50, 3, 2.0, &[1.0, 2.0, 3.0]).unwrap();
        let b = synth_problem(7, 50, 3, 2.0, &[1.0, 2.0, 3.0]).unwrap();
        let bits = |s: &SynthProblem| -> Vec<u64> {
            s.problem
                .posteriors()
                .as_slice()
                .iter()
                .map(|x| x.to_bits())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels, b.labels);
        let c = synth_problem(8, 50, 3, 2.0, &[1.0, 2.0, 3.0]).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn large_sharpness_is_nearly_one_hot() {
        let s = synth_problem(1, 40, 4, 60.0, &[1.0; 4]).unwrap();
        for (row, &y) in s.problem.posteriors().rows().zip(&s.labels) {
            assert!(row[y] >= 1.0 - 1e-6);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn counts_follow_target_priors() {
        let s = synth_problem(3, 4000, 2, 1.0, &[1729.0, 2271.0]).unwrap();
        assert_eq!(s.problem.counts().as_slice(), &[1729, 2271]);
        assert_eq!(s.labels.iter().filter(|&&y| y == 0).count(), 1729);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(synth_problem(0, 1, 2, 1.0, &[1.0, 1.0]).is_err());
        assert!(synth_problem(0, 10, 1, 1.0, &[1.0]).is_err());
        assert!(synth_problem(0, 10, 2, 0.0, &[1.0, 1.0]).is_err());
        assert!(synth_problem(0, 10, 2, 1.0, &[1.0]).is_err());
    }
}
