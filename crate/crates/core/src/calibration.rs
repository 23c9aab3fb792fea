//! Prior-shift calibration: apply a bias vector to posterior scores and
//! measure the effect with cross-entropy.

use crate::error::{Result, SucpaError};
use crate::map::iterate_orbit;
use crate::numerics::softmax_into;
use crate::problem::{
    BetaVector, ClassCounts, PosteriorMatrix, SucpaProblem, POSITIVITY_THRESHOLD,
};

/// Outcome of a full SUCPA run.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub beta_star: BetaVector,
    pub calibrated: PosteriorMatrix,
    /// Nats; `None` without labels.
    pub cross_entropy_before: Option<f64>,
    pub cross_entropy_after: Option<f64>,
    /// Cross-entropy at every orbit point, as a diagnostic; not monotone in
    /// general. `None` without labels.
    pub cross_entropy_trace: Option<Vec<f64>>,
    pub steps: usize,
    pub converged: bool,
}

/// `P_ik e^{beta_k} / sum_j P_ij e^{beta_j}`, row by row.
pub fn calibrate(posteriors: &PosteriorMatrix, beta: &BetaVector) -> Result<PosteriorMatrix> {
    let k = posteriors.k();
    if beta.len() != k {
        return Err(SucpaError::ShapeMismatch {
            expected: format!("beta of length {k}"),
            got: format!("length {}", beta.len()),
        });
    }
    let mut out = vec![0.0; posteriors.n() * k];
    let mut logits = vec![0.0; k];
    for (row, dst) in posteriors.rows().zip(out.chunks_exact_mut(k)) {
        for ((l, p), b) in logits.iter_mut().zip(row).zip(beta.iter()) {
            *l = p.ln() + b;
        }
        softmax_into(&logits, dst);
    }
    if out.iter().any(|q| q.is_nan() || *q < POSITIVITY_THRESHOLD) {
        return Err(SucpaError::overflow("calibrated score underflowed to zero"));
    }
    PosteriorMatrix::new(posteriors.n(), k, out)
}

/// Mean negative log-probability of the labelled class, in nats. Labels are
/// zero-based class indices.
pub fn cross_entropy(posteriors: &PosteriorMatrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != posteriors.n() {
        return Err(SucpaError::ShapeMismatch {
            expected: format!("{} labels", posteriors.n()),
            got: format!("{}", labels.len()),
        });
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= posteriors.k() {
            return Err(SucpaError::invalid(format!(
                "label {} of sample {i} is outside 1..={}",
                y + 1,
                posteriors.k()
            )));
        }
        total -= posteriors.get(i, y).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Runs the fixed-point iteration from `beta0` and applies the final point.
pub fn run_sucpa(
    posteriors: &PosteriorMatrix,
    counts: &ClassCounts,
    beta0: BetaVector,
    tol: f64,
    max_steps: usize,
    labels: Option<&[usize]>,
) -> Result<CalibrationResult> {
    let problem = SucpaProblem::new(posteriors.clone(), counts.clone())?;
    run_sucpa_on(&problem, beta0, tol, max_steps, labels)
}

/// [`run_sucpa`] for an already validated problem.
pub fn run_sucpa_on(
    problem: &SucpaProblem,
    beta0: BetaVector,
    tol: f64,
    max_steps: usize,
    labels: Option<&[usize]>,
) -> Result<CalibrationResult> {
    let posteriors = problem.posteriors();
    if let Some(l) = labels {
        // Validate before spending time on the orbit.
        cross_entropy(posteriors, l)?;
    }
    let orbit = iterate_orbit(problem, beta0, tol, max_steps)?;
    let beta_star = orbit.last().clone();
    let calibrated = calibrate(posteriors, &beta_star)?;

    let (before, after, trace) = match labels {
        Some(l) => {
            let trace = orbit
                .points()
                .iter()
                .map(|b| cross_entropy(&calibrate(posteriors, b)?, l))
                .collect::<Result<Vec<_>>>()?;
            (
                Some(cross_entropy(posteriors, l)?),
                Some(cross_entropy(&calibrated, l)?),
                Some(trace),
            )
        }
        None => (None, None, None),
    };

    Ok(CalibrationResult {
        beta_star,
        calibrated,
        cross_entropy_before: before,
        cross_entropy_after: after,
        cross_entropy_trace: trace,
        steps: orbit.steps(),
        converged: orbit.converged(),
    })
}

/// `max_k |sum_i calibrated_ik - N_k| / N`: zero exactly at fixed points.
pub fn aggregation_defect(calibrated: &PosteriorMatrix, counts: &ClassCounts) -> f64 {
    let n = calibrated.n() as f64;
    calibrated
        .column_sums()
        .iter()
        .zip(counts.as_slice())
        .map(|(s, &c)| (s - c as f64).abs())
        .fold(0.0, f64::max)
        / n
}

/// Total-variation distance between the mean calibrated posterior and the
/// target priors `N_k / N`.
pub fn prior_tv_distance(posteriors: &PosteriorMatrix, counts: &ClassCounts) -> f64 {
    let n = posteriors.n() as f64;
    let total = counts.total() as f64;
    0.5 * posteriors
        .column_sums()
        .iter()
        .zip(counts.as_slice())
        .map(|(s, &c)| (s / n - c as f64 / total).abs())
        .sum::<f64>()
}

/// One point of a prior-perturbation sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub perturbation: f64,
    pub counts: ClassCounts,
    pub beta_star: BetaVector,
    pub converged: bool,
    pub cross_entropy_after: Option<f64>,
}

/// Re-runs SUCPA with the prior of class 1 scaled by `1 + eps` (then
/// renormalized) for every `eps` in `perturbations`. Diagnostic only: shows
/// how the result degrades when the target counts are misestimated.
pub fn prior_sweep(
    posteriors: &PosteriorMatrix,
    counts: &ClassCounts,
    perturbations: &[f64],
    tol: f64,
    max_steps: usize,
    labels: Option<&[usize]>,
) -> Result<Vec<SweepPoint>> {
    let n = posteriors.n() as u64;
    perturbations
        .iter()
        .map(|&eps| {
            if !(eps > -1.0 && eps.is_finite()) {
                return Err(SucpaError::invalid(format!(
                    "perturbation {eps} must be finite and > -1"
                )));
            }
            let mut weights = counts.as_f64();
            weights[0] *= 1.0 + eps;
            let shifted = ClassCounts::from_proportions(&weights, n)?;
            let res = run_sucpa(
                posteriors,
                &shifted,
                BetaVector::zeros(posteriors.k()),
                tol,
                max_steps,
                labels,
            )?;
            Ok(SweepPoint {
                perturbation: eps,
                counts: shifted,
                beta_star: res.beta_star,
                converged: res.converged,
                cross_entropy_after: res.cross_entropy_after,
            })
        })
        .collect()
}
