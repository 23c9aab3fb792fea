//! Named invariant checks run against a concrete problem.
//!
//! Each property is a [`PropertyCheck`] registered in a [`CheckRegistry`]; the
//! `check` subcommand runs all of them (or a named subset) and reports one
//! line per property. Random points are drawn from a seeded generator, so a
//! run is reproducible.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calibration::{aggregation_defect, calibrate};
use crate::error::{Result, SucpaError};
use crate::map::{
    fixed_point_residual, increment_identity_residual, iterate_orbit, sucpa_step,
    DEFAULT_MAX_STEPS, DEFAULT_TOL,
};
use crate::problem::{BetaVector, SucpaProblem};
use crate::spectral::{
    finite_difference_jacobian, jacobian, spectral_report, spectral_report_with, Hyperbolicity,
    QuadraticSolver, MAX_CLASSES,
};
use crate::two_class::{crosses_fixed_line, TwoClassProblem, DEFAULT_INTERCEPT_TOL};

/// Distance from the fixed line below which the side test abstains.
pub const SIDE_DEAD_ZONE: f64 = 1e-10;

/// Inputs shared by all checks.
#[derive(Debug, Clone)]
pub struct CheckContext<'a> {
    pub problem: &'a SucpaProblem,
    pub seed: u64,
    pub tol: f64,
    pub max_steps: usize,
    /// Random points per sampled property.
    pub samples: usize,
}

impl<'a> CheckContext<'a> {
    pub fn new(problem: &'a SucpaProblem) -> Self {
        CheckContext {
            problem,
            seed: 0,
            tol: DEFAULT_TOL,
            max_steps: DEFAULT_MAX_STEPS,
            samples: 32,
        }
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    fn random_beta(&self, rng: &mut ChaCha8Rng, half_width: f64) -> BetaVector {
        BetaVector::new(
            (0..self.problem.k())
                .map(|_| rng.random_range(-half_width..=half_width))
                .collect(),
        )
        .expect("finite by construction")
    }

    fn two_class(&self) -> Result<TwoClassProblem> {
        TwoClassProblem::new(self.problem.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Property does not apply to this problem (e.g. two-class only).
    Skipped,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.status, self.name, self.detail)
    }
}

/// Pass/fail plus a human-readable measurement.
pub type Verdict = (bool, String);

pub trait PropertyCheck: Send + Sync {
    fn name(&self) -> &'static str;

    fn applies_to(&self, _k: usize) -> bool {
        true
    }

    fn run(&self, ctx: &CheckContext<'_>) -> Result<Verdict>;
}

type CheckFn = fn(&CheckContext<'_>) -> Result<Verdict>;

struct FnCheck {
    name: &'static str,
    two_class_only: bool,
    run: CheckFn,
}

impl PropertyCheck for FnCheck {
    fn name(&self) -> &'static str {
        self.name
    }

    fn applies_to(&self, k: usize) -> bool {
        !self.two_class_only || k == 2
    }

    fn run(&self, ctx: &CheckContext<'_>) -> Result<Verdict> {
        (self.run)(ctx)
    }
}

fn verdict(ok: bool, detail: String) -> Result<Verdict> {
    Ok((ok, detail))
}

fn shift_equivariance(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let mut rng = ctx.rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..ctx.samples {
        let beta = ctx.random_beta(&mut rng, 10.0);
        let lambda = rng.random_range(-20.0..=20.0);
        let a = sucpa_step(ctx.problem, &beta)?;
        let b = sucpa_step(ctx.problem, &beta.shifted(lambda)?)?;
        for (x, y) in a.iter().zip(b.iter()) {
            worst = worst.max((y - x - lambda).abs());
        }
    }
    verdict(
        worst <= 1e-10,
        format!("max deviation {worst:.3e} (limit 1e-10)"),
    )
}

fn sample_orbits(ctx: &CheckContext<'_>, salt: u64) -> Result<Vec<crate::map::Orbit>> {
    let mut rng = ctx.rng(salt);
    let mut starts = vec![BetaVector::zeros(ctx.problem.k())];
    starts.extend((0..4).map(|_| ctx.random_beta(&mut rng, 10.0)));
    starts
        .into_iter()
        .map(|b| iterate_orbit(ctx.problem, b, ctx.tol, ctx.max_steps))
        .collect()
}

fn increment_identity(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let n = ctx.problem.n() as f64;
    let mut worst: f64 = 0.0;
    for orbit in sample_orbits(ctx, 2)? {
        for r in increment_identity_residual(ctx.problem, &orbit)? {
            worst = worst.max(r);
        }
    }
    verdict(
        worst <= 1e-8 * n,
        format!(
            "max |sum N_k e^-delta_k - N| = {worst:.3e} (limit {:.1e})",
            1e-8 * n
        ),
    )
}

fn fixed_point_residual_check(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    for orbit in sample_orbits(ctx, 3)? {
        match orbit.limit() {
            Some(l) => worst = worst.max(fixed_point_residual(ctx.problem, l)?),
            None => unconverged += 1,
        }
    }
    verdict(
        worst <= 10.0 * ctx.tol && unconverged == 0,
        format!(
            "max ||f(b*) - b*|| = {worst:.3e} (limit {:.1e}), {unconverged} unconverged",
            10.0 * ctx.tol
        ),
    )
}

fn determinism(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let mut rng = ctx.rng(4);
    let start = ctx.random_beta(&mut rng, 5.0);
    let a = iterate_orbit(ctx.problem, start.clone(), ctx.tol, ctx.max_steps)?;
    let b = iterate_orbit(ctx.problem, start, ctx.tol, ctx.max_steps)?;
    let same = a.points().len() == b.points().len()
        && a.points().iter().zip(b.points()).all(|(x, y)| {
            x.iter()
                .zip(y.iter())
                .all(|(u, v)| u.to_bits() == v.to_bits())
        });
    verdict(
        same,
        format!("{} points compared bitwise", a.points().len()),
    )
}

fn jacobian_structure(ctx: &CheckContext<'_>) -> Result<Verdict> {
    if ctx.problem.k() > MAX_CLASSES {
        return verdict(false, format!("K > {MAX_CLASSES} not supported"));
    }
    let mut rng = ctx.rng(5);
    let (mut min_entry, mut row_defect, mut max_sub, mut min_cos) =
        (f64::INFINITY, 0.0_f64, 0.0_f64, 1.0_f64);
    let mut bad_class = 0;
    for _ in 0..ctx.samples {
        let beta = ctx.random_beta(&mut rng, 10.0);
        let j = jacobian(ctx.problem, &beta)?;
        let rep = spectral_report(&j, ctx.problem)?;
        min_entry = min_entry.min(j.min_entry());
        row_defect = row_defect.max(j.row_sum_defect());
        max_sub = max_sub.max(rep.subdominant_modulus);
        min_cos = min_cos.min(rep.perron_cosine);
        if rep.classification != Hyperbolicity::NonHyperbolicWithCenterLine {
            bad_class += 1;
        }
    }
    verdict(
        min_entry > 0.0 && row_defect <= 1e-10 && bad_class == 0 && max_sub < 1.0,
        format!(
            "min entry {min_entry:.3e}, row-sum defect {row_defect:.3e}, \
             max subdominant |mu| {max_sub:.6}, min Perron cosine {min_cos:.12}, \
             {bad_class} unresolved"
        ),
    )
}

/// Relative agreement with an absolute floor on the row scale (rows sum to 1).
pub fn jacobian_fd_close(analytic: f64, fd: f64) -> bool {
    (analytic - fd).abs() <= 1e-5 * analytic.abs().max(fd.abs()) + 1e-8
}

fn jacobian_finite_difference(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let mut rng = ctx.rng(6);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..ctx.samples {
        let beta = ctx.random_beta(&mut rng, 10.0);
        let j = jacobian(ctx.problem, &beta)?;
        let fd = finite_difference_jacobian(ctx.problem, &beta, 1e-6)?;
        for (a, f) in j.entries().iter().zip(fd.entries()) {
            worst = worst.max((a - f).abs());
            if !jacobian_fd_close(*a, *f) {
                failures += 1;
            }
        }
    }
    verdict(
        failures == 0,
        format!("max |J - J_fd| = {worst:.3e}, {failures} entries outside 1e-5 relative"),
    )
}

fn calibration_aggregation(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    for orbit in sample_orbits(ctx, 7)? {
        if let Some(l) = orbit.limit() {
            let c = calibrate(ctx.problem.posteriors(), l)?;
            worst = worst.max(aggregation_defect(&c, ctx.problem.counts()));
        }
    }
    verdict(
        worst <= 1e-6,
        format!("max |sum_i Q_ik - N_k| / N = {worst:.3e} (limit 1e-6)"),
    )
}

fn calibration_shift_invariance(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let mut rng = ctx.rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..ctx.samples.min(8) {
        let beta = ctx.random_beta(&mut rng, 5.0);
        let lambda = rng.random_range(-20.0..=20.0);
        let a = calibrate(ctx.problem.posteriors(), &beta)?;
        let b = calibrate(ctx.problem.posteriors(), &beta.shifted(lambda)?)?;
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            worst = worst.max((x - y).abs());
        }
    }
    verdict(
        worst <= 1e-12,
        format!("max deviation {worst:.3e} (limit 1e-12)"),
    )
}

fn alpha_identity(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let two = ctx.two_class()?;
    let n = ctx.problem.n() as f64;
    let mut rng = ctx.rng(9);
    let mut worst: f64 = 0.0;
    for _ in 0..ctx.samples {
        let x = rng.random_range(-30.0..=30.0);
        worst = worst.max(two.alpha_identity_residual(x)?.abs());
    }
    verdict(
        worst <= 1e-9 * n,
        format!(
            "max |N1 a1 + N2 e^x a2 - N| = {worst:.3e} (limit {:.1e})",
            1e-9 * n
        ),
    )
}

fn alpha_monotone(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let two = ctx.two_class()?;
    let mut rng = ctx.rng(10);
    let mut violations = 0;
    for _ in 0..ctx.samples {
        let x1 = rng.random_range(-15.0..=15.0);
        let x2 = x1 + rng.random_range(1e-3..=5.0);
        let (a1, a2) = two.alpha(x1)?;
        let (b1, b2) = two.alpha(x2)?;
        let (d1, d2) = two.alpha_prime(x1)?;
        if !(a1 > b1 && a2 > b2 && d1 < 0.0 && d2 < 0.0) {
            violations += 1;
        }
        if two.g(x1)? < two.g(x2)? - 1e-12 || two.h(x1)? > 0.0 {
            violations += 1;
        }
    }
    verdict(
        violations == 0,
        format!("{violations} violations of alpha/g decreasing, alpha' < 0, h <= 0"),
    )
}

fn alpha_prime_fd(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let two = ctx.two_class()?;
    let b = two.find_intercept(DEFAULT_INTERCEPT_TOL)?.intercept_b;
    let mut rng = ctx.rng(11);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..ctx.samples {
        let x = b + rng.random_range(-3.0..=3.0);
        let (d1, d2) = two.alpha_prime(x)?;
        let (p1, p2) = two.alpha(x + h)?;
        let (m1, m2) = two.alpha(x - h)?;
        let f1 = (p1 - m1) / (2.0 * h);
        let f2 = (p2 - m2) / (2.0 * h);
        worst = worst
            .max((f1 - d1).abs() / d1.abs().max(1e-6))
            .max((f2 - d2).abs() / d2.abs().max(1e-6));
    }
    verdict(
        worst <= 1e-5,
        format!("max relative error {worst:.3e} (limit 1e-5)"),
    )
}

fn fixed_line(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let two = ctx.two_class()?;
    let line = two.find_intercept(DEFAULT_INTERCEPT_TOL)?;
    let (a1, a2) = two.alpha(line.intercept_b)?;
    let r1 = (a1 - 1.0).abs();
    let r2 = (a2 - (-line.intercept_b).exp()).abs() / (-line.intercept_b).exp();
    let res = fixed_point_residual(ctx.problem, &line.representative_point)?;
    verdict(
        r1 <= 1e-10 && r2 <= 1e-9 && res <= 1e-9,
        format!(
            "b = {}, |a1(b) - 1| = {r1:.3e}, rel |a2(b) - e^-b| = {r2:.3e}, residual {res:.3e}",
            line.intercept_b
        ),
    )
}

fn eigenpair(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let two = ctx.two_class()?;
    let line = two.find_intercept(DEFAULT_INTERCEPT_TOL)?;
    let b = line.intercept_b;
    let mu = line.stable_eigenvalue_mu;
    let j = jacobian(ctx.problem, &line.representative_point)?;
    let rep = spectral_report_with(&j, ctx.problem, &QuadraticSolver)?;
    let numeric_mu = rep.eigenvalues[1].re;
    let cos = crate::numerics::abs_cosine(&rep.eigenvectors[1], &line.stable_eigenvector);
    let mut drift: f64 = 0.0;
    for lambda in [-10.0, 10.0] {
        let jl = jacobian(ctx.problem, &BetaVector::new(vec![lambda, lambda + b])?)?;
        drift = drift.max(jl.max_abs_diff(&j));
    }
    verdict(
        (0.0..1.0).contains(&mu) && (mu - numeric_mu).abs() <= 1e-8 && cos >= 1.0 - 1e-8
            && drift <= 1e-12,
        format!(
            "mu = {mu}, |mu - eig| = {:.3e}, cos(v, [N2,-N1]) = {cos:.12}, J drift along line {drift:.3e}",
            (mu - numeric_mu).abs()
        ),
    )
}

fn intercept_sandwich(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let two = ctx.two_class()?;
    let b = two.find_intercept(DEFAULT_INTERCEPT_TOL)?.intercept_b;
    let mut rng = ctx.rng(12);
    let mut violations = 0;
    for _ in 0..ctx.samples {
        let d = rng.random_range(1e-3..=20.0);
        let above = two.phi(b + d)?;
        let below = two.phi(b - d)?;
        if !(above >= b - 1e-10 && above < b + d) {
            violations += 1;
        }
        if !(below <= b + 1e-10 && below > b - d) {
            violations += 1;
        }
    }
    verdict(
        violations == 0,
        format!("{violations} violations of b <= phi(x) < x / x < phi(x) <= b"),
    )
}

fn two_class_orbit_limits(ctx: &CheckContext<'_>) -> Result<(f64, Vec<crate::map::Orbit>)> {
    let two = ctx.two_class()?;
    let b = two.find_intercept(DEFAULT_INTERCEPT_TOL)?.intercept_b;
    Ok((b, sample_orbits(ctx, 13)?))
}

fn semiplane_invariance(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let (b, orbits) = two_class_orbit_limits(ctx)?;
    let crossings = orbits
        .iter()
        .filter(|o| crosses_fixed_line(o, b, SIDE_DEAD_ZONE))
        .count();
    verdict(
        crossings == 0,
        format!(
            "{crossings} of {} orbits crossed the fixed line",
            orbits.len()
        ),
    )
}

fn global_convergence(ctx: &CheckContext<'_>) -> Result<Verdict> {
    let (b, orbits) = two_class_orbit_limits(ctx)?;
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    for orbit in &orbits {
        match orbit.limit() {
            Some(l) => worst = worst.max((l[1] - l[0] - b).abs()),
            None => unconverged += 1,
        }
    }
    verdict(
        unconverged == 0 && worst <= 1e-7,
        format!("{unconverged} unconverged, max |b2* - b1* - b| = {worst:.3e} (limit 1e-7)"),
    )
}

/// Named collection of [`PropertyCheck`]s.
pub struct CheckRegistry {
    checks: Vec<Box<dyn PropertyCheck>>,
}

impl Default for CheckRegistry {
    fn default() -> Self {
        Self::with_builtin()
    }
}

impl CheckRegistry {
    pub fn empty() -> Self {
        CheckRegistry { checks: Vec::new() }
    }

    pub fn with_builtin() -> Self {
        let table: [(&'static str, bool, CheckFn); 16] = [
            ("shift-equivariance", false, shift_equivariance),
            ("increment-identity", false, increment_identity),
            ("fixed-point-residual", false, fixed_point_residual_check),
            ("determinism", false, determinism),
            ("jacobian-structure", false, jacobian_structure),
            (
                "jacobian-finite-difference",
                false,
                jacobian_finite_difference,
            ),
            ("calibration-aggregation", false, calibration_aggregation),
            (
                "calibration-shift-invariance",
                false,
                calibration_shift_invariance,
            ),
            ("alpha-identity", true, alpha_identity),
            ("alpha-monotone", true, alpha_monotone),
            ("alpha-derivative", true, alpha_prime_fd),
            ("fixed-line", true, fixed_line),
            ("eigenpair", true, eigenpair),
            ("intercept-sandwich", true, intercept_sandwich),
            ("semiplane-invariance", true, semiplane_invariance),
            ("global-convergence", true, global_convergence),
        ];
        let mut r = Self::empty();
        for (name, two_class_only, run) in table {
            r.checks.push(Box::new(FnCheck {
                name,
                two_class_only,
                run,
            }));
        }
        r
    }

    pub fn register(&mut self, check: Box<dyn PropertyCheck>) -> Result<()> {
        if self.get(check.name()).is_some() {
            return Err(SucpaError::invalid(format!(
                "check '{}' is already registered",
                check.name()
            )));
        }
        self.checks.push(check);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn PropertyCheck> {
        self.checks
            .iter()
            .find(|c| c.name() == name)
            .map(|c| c.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.checks.iter().map(|c| c.name())
    }

    /// Runs every check (or those named in `only`). Errors raised inside a
    /// check count as failures.
    pub fn run(&self, ctx: &CheckContext<'_>, only: &[String]) -> Result<Vec<CheckReport>> {
        for name in only {
            if self.get(name).is_none() {
                return Err(SucpaError::invalid(format!("unknown check '{name}'")));
            }
        }
        Ok(self
            .checks
            .iter()
            .filter(|c| only.is_empty() || only.iter().any(|o| o == c.name()))
            .map(|c| {
                if !c.applies_to(ctx.problem.k()) {
                    return CheckReport {
                        name: c.name(),
                        status: CheckStatus::Skipped,
                        detail: format!("not applicable for K = {}", ctx.problem.k()),
                    };
                }
                let (status, detail) = match c.run(ctx) {
                    Ok((true, d)) => (CheckStatus::Pass, d),
                    Ok((false, d)) => (CheckStatus::Fail, d),
                    Err(e) => (CheckStatus::Fail, format!("error: {e}")),
                };
                CheckReport {
                    name: c.name(),
                    status,
                    detail,
                }
            })
            .collect())
    }
}
