//! Command-line front end.
//!
//! `dispatch` parses arguments, runs one subcommand and maps the outcome to
//! an exit code: 0 on success, 1 for usage and validation errors, 2 for
//! numeric failures (including a violated property under `check`).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::calibration::{prior_sweep, run_sucpa_on};
use crate::check::{CheckContext, CheckRegistry, CheckStatus};
use crate::error::{Result, SucpaError};
use crate::io::{
    export_orbit, fmt_f64, load_problem, normalize_first_coordinate, save_problem, ProblemFile,
    ProblemFormat, ZeroPolicy,
};
use crate::map::{iterate_orbit, DEFAULT_MAX_STEPS, DEFAULT_TOL};
use crate::problem::{BetaVector, ClassCounts};
use crate::spectral::{jacobian, spectral_report_with, SolverRegistry};
use crate::synth::synth_problem;
use crate::two_class::{TwoClassProblem, DEFAULT_INTERCEPT_TOL};

#[derive(Debug, Parser)]
#[command(
    name = "sucpa",
    version,
    about = "SUCPA prior-shift calibration as a dynamical system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the iteration to convergence and report the bias vector.
    Fit(FitArgs),
    /// Locate the line of fixed points.
    FixedPoint(FixedPointArgs),
    /// Jacobian and its spectrum at a point.
    Jacobian(JacobianArgs),
    /// Export orbits for a list of initial conditions.
    Orbit(OrbitArgs),
    /// Write a synthetic problem file.
    Synth(SynthArgs),
    /// Run the invariant suite on a problem.
    Check(CheckArgs),
    /// Re-run with the class-1 prior perturbed.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Problem file (CSV with `p_1..p_K[,label]`, or JSON).
    #[arg(long)]
    input: PathBuf,
    /// Defaults to the file extension.
    #[arg(long)]
    format: Option<ProblemFormat>,
    /// Target class counts, comma separated. Overrides any sidecar.
    #[arg(long, value_parser = parse_counts)]
    counts: Option<ClassCounts>,
    #[arg(long, default_value = "reject")]
    zero_policy: ZeroPolicy,
}

#[derive(Debug, Args)]
struct IterArgs {
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    iter: IterArgs,
    /// Starting bias vector (defaults to zero).
    #[arg(long, value_parser = parse_f64_list, allow_hyphen_values = true)]
    beta0: Option<Floats>,
    /// Write the calibrated scores here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FixedPointArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    iter: IterArgs,
    #[arg(long, value_parser = parse_f64_list, allow_hyphen_values = true)]
    beta0: Option<Floats>,
}

#[derive(Debug, Args)]
struct JacobianArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Evaluation point (defaults to zero).
    #[arg(long, value_parser = parse_f64_list, allow_hyphen_values = true)]
    beta: Option<Floats>,
    /// auto, quadratic, power-deflation or jacobi.
    #[arg(long, default_value = "auto")]
    eigen_solver: String,
}

#[derive(Debug, Args)]
struct OrbitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    iter: IterArgs,
    /// Initial condition; repeat for several orbits.
    #[arg(long = "ic", value_parser = parse_f64_list, allow_hyphen_values = true)]
    ics: Vec<Floats>,
    /// Output directory, receives `orbit_000.csv` and `orbit_000.json`, ...
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 2.0)]
    sharpness: f64,
    /// Target class proportions (defaults to uniform).
    #[arg(long, value_parser = parse_f64_list)]
    priors: Option<Floats>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    format: Option<ProblemFormat>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, required_unless_present = "list")]
    input: Option<PathBuf>,
    #[arg(long)]
    format: Option<ProblemFormat>,
    #[arg(long, value_parser = parse_counts)]
    counts: Option<ClassCounts>,
    #[arg(long, default_value = "reject")]
    zero_policy: ZeroPolicy,
    #[command(flatten)]
    iter: IterArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random points per sampled property.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    /// Run only these properties (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Print the property names and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    iter: IterArgs,
    /// Relative perturbations of the class-1 prior.
    #[arg(long, value_parser = parse_f64_list, allow_hyphen_values = true,
          default_value = "-0.2,-0.1,0,0.1,0.2")]
    perturbations: Floats,
}

/// Comma-separated reals, parsed as a single flag value.
#[derive(Debug, Clone, PartialEq)]
struct Floats(Vec<f64>);

fn parse_f64_list(s: &str) -> std::result::Result<Floats, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| format!("'{t}' is not a number: {e}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(Floats)
}

fn parse_counts(s: &str) -> std::result::Result<ClassCounts, String> {
    let counts = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| format!("'{t}' is not a count: {e}"))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    ClassCounts::new(counts).map_err(|e| e.to_string())
}

fn open(input: &InputArgs) -> Result<ProblemFile> {
    open_parts(
        &input.input,
        input.format,
        input.zero_policy,
        input.counts.clone(),
    )
}

fn open_parts(
    path: &Path,
    format: Option<ProblemFormat>,
    zero_policy: ZeroPolicy,
    counts: Option<ClassCounts>,
) -> Result<ProblemFile> {
    let format = format.unwrap_or_else(|| ProblemFormat::from_path(path));
    let file = load_problem(path, format, zero_policy, counts)?;
    if file.clamped > 0 {
        log::warn!("{}: clamped {} entries", path.display(), file.clamped);
    }
    Ok(file)
}

fn beta_or_zero(values: Option<&Floats>, k: usize) -> Result<BetaVector> {
    match values.map(|f| &f.0) {
        Some(v) if v.len() != k => Err(SucpaError::ShapeMismatch {
            expected: format!("{k} coordinates"),
            got: format!("{}", v.len()),
        }),
        Some(v) => BetaVector::new(v.clone()),
        None => Ok(BetaVector::zeros(k)),
    }
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| fmt_f64(v))
        .collect::<Vec<_>>()
        .join(",")
}

fn wr(out: &mut dyn Write, line: String) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| SucpaError::io("<stdout>", e))
}

fn fit(args: &FitArgs, out: &mut dyn Write) -> Result<i32> {
    let file = open(&args.input)?;
    let beta0 = beta_or_zero(args.beta0.as_ref(), file.problem.k())?;
    let res = run_sucpa_on(
        &file.problem,
        beta0,
        args.iter.tol,
        args.iter.max_steps,
        file.labels.as_deref(),
    )?;
    wr(out, format!("beta_star = {}", join(&res.beta_star)))?;
    wr(out, format!("steps = {}", res.steps))?;
    wr(out, format!("converged = {}", res.converged))?;
    if let (Some(b), Some(a)) = (res.cross_entropy_before, res.cross_entropy_after) {
        wr(out, format!("cross_entropy_before = {}", fmt_f64(b)))?;
        wr(out, format!("cross_entropy_after = {}", fmt_f64(a)))?;
    }
    if let Some(path) = &args.output {
        let format = ProblemFormat::from_path(path);
        let problem =
            crate::problem::SucpaProblem::new(res.calibrated, file.problem.counts().clone())?;
        save_problem(path, format, &problem, file.labels.as_deref())?;
        wr(out, format!("calibrated = {}", path.display()))?;
    }
    if !res.converged {
        log::warn!("no convergence within {} steps", args.iter.max_steps);
        return Ok(2);
    }
    Ok(0)
}

fn fixed_point(args: &FixedPointArgs, out: &mut dyn Write) -> Result<i32> {
    let file = open(&args.input)?;
    let k = file.problem.k();
    if k == 2 {
        let two = TwoClassProblem::new(file.problem)?;
        let line = two.find_intercept(DEFAULT_INTERCEPT_TOL)?;
        wr(out, format!("b = {}", fmt_f64(line.intercept_b)))?;
        wr(out, format!("mu = {}", fmt_f64(line.stable_eigenvalue_mu)))?;
        wr(out, format!("v = {}", join(&line.stable_eigenvector)))?;
        return Ok(0);
    }
    let beta0 = beta_or_zero(args.beta0.as_ref(), k)?;
    let orbit = iterate_orbit(&file.problem, beta0, args.iter.tol, args.iter.max_steps)?;
    let Some(limit) = orbit.limit() else {
        return Err(SucpaError::Numeric(format!(
            "no convergence within {} steps",
            args.iter.max_steps
        )));
    };
    wr(
        out,
        format!(
            "representative_fixed_point = {}",
            join(&normalize_first_coordinate(limit))
        ),
    )?;
    wr(out, format!("direction = {}", join(&vec![1.0; k])))?;
    wr(out, format!("steps = {}", orbit.steps()))?;
    wr(out, "status = conjectured".to_string())?;
    Ok(0)
}

fn jacobian_cmd(args: &JacobianArgs, out: &mut dyn Write) -> Result<i32> {
    let file = open(&args.input)?;
    let k = file.problem.k();
    let beta = beta_or_zero(args.beta.as_ref(), k)?;
    let registry = SolverRegistry::with_builtin();
    let solver = registry.select(&args.eigen_solver, k)?;
    let j = jacobian(&file.problem, &beta)?;
    let rep = spectral_report_with(&j, &file.problem, solver)?;
    wr(out, format!("beta = {}", join(&beta)))?;
    for r in 0..k {
        wr(out, format!("J[{}] = {}", r + 1, join(j.row(r))))?;
    }
    wr(out, format!("solver = {}", rep.solver))?;
    for (i, (val, vec)) in rep.eigenvalues.iter().zip(&rep.eigenvectors).enumerate() {
        wr(
            out,
            format!(
                "eigenvalue[{}] = {} {:+e}i  vector = {}",
                i + 1,
                fmt_f64(val.re),
                val.im,
                join(vec)
            ),
        )?;
    }
    wr(
        out,
        format!(
            "unit_eigenvector_check = {}",
            fmt_f64(rep.unit_eigenvector_check)
        ),
    )?;
    wr(
        out,
        format!("perron_cosine = {}", fmt_f64(rep.perron_cosine)),
    )?;
    wr(
        out,
        format!("unit_eigenvalue_count = {}", rep.unit_eigenvalue_count),
    )?;
    wr(
        out,
        format!("subdominant_modulus = {}", fmt_f64(rep.subdominant_modulus)),
    )?;
    wr(
        out,
        format!("spectral_gap = {}", fmt_f64(rep.spectral_gap())),
    )?;
    wr(out, format!("classification = {}", rep.classification))?;
    Ok(0)
}

fn orbit_cmd(args: &OrbitArgs, out: &mut dyn Write) -> Result<i32> {
    let file = open(&args.input)?;
    let k = file.problem.k();
    let ics = if args.ics.is_empty() {
        vec![Floats(vec![0.0; k])]
    } else {
        args.ics.clone()
    };
    let line = if k == 2 {
        Some(TwoClassProblem::new(file.problem.clone())?.find_intercept(DEFAULT_INTERCEPT_TOL)?)
    } else {
        None
    };
    fs::create_dir_all(&args.output).map_err(|e| SucpaError::io(&args.output, e))?;
    for (idx, ic) in ics.iter().enumerate() {
        let beta0 = beta_or_zero(Some(ic), k)?;
        let orbit = iterate_orbit(&file.problem, beta0, args.iter.tol, args.iter.max_steps)?;
        let path = args.output.join(format!("orbit_{idx:03}.csv"));
        export_orbit(&orbit, line.as_ref(), file.problem.counts(), &path)?;
        wr(
            out,
            format!(
                "{} steps = {} converged = {}",
                path.display(),
                orbit.steps(),
                orbit.converged()
            ),
        )?;
    }
    Ok(0)
}

fn synth_cmd(args: &SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let priors = args
        .priors
        .clone()
        .map_or_else(|| vec![1.0; args.k], |f| f.0);
    let s = synth_problem(args.seed, args.n, args.k, args.sharpness, &priors)?;
    let format = args
        .format
        .unwrap_or_else(|| ProblemFormat::from_path(&args.output));
    save_problem(&args.output, format, &s.problem, Some(&s.labels))?;
    let counts: Vec<String> = s
        .problem
        .counts()
        .as_slice()
        .iter()
        .map(u64::to_string)
        .collect();
    wr(
        out,
        format!(
            "wrote {} counts = {}",
            args.output.display(),
            counts.join(",")
        ),
    )?;
    Ok(0)
}

fn check_cmd(args: &CheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let registry = CheckRegistry::with_builtin();
    if args.list {
        for name in registry.names() {
            wr(out, name.to_string())?;
        }
        return Ok(0);
    }
    let path = args
        .input
        .as_ref()
        .ok_or_else(|| SucpaError::invalid("--input is required"))?;
    let file = open_parts(path, args.format, args.zero_policy, args.counts.clone())?;
    let ctx = CheckContext {
        problem: &file.problem,
        seed: args.seed,
        tol: args.iter.tol,
        max_steps: args.iter.max_steps,
        samples: args.samples,
    };
    let reports = registry.run(&ctx, &args.only)?;
    for r in &reports {
        wr(out, r.to_string())?;
    }
    match reports.iter().find(|r| r.status == CheckStatus::Fail) {
        Some(first) => {
            wr(err, format!("property violated: {}", first.name))?;
            Ok(2)
        }
        None => Ok(0),
    }
}

fn sweep_cmd(args: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let file = open(&args.input)?;
    let points = prior_sweep(
        file.problem.posteriors(),
        file.problem.counts(),
        &args.perturbations.0,
        args.iter.tol,
        args.iter.max_steps,
        file.labels.as_deref(),
    )?;
    wr(
        out,
        "perturbation,counts,beta_star,converged,cross_entropy_after".to_string(),
    )?;
    for p in points {
        let counts: Vec<String> = p.counts.as_slice().iter().map(u64::to_string).collect();
        wr(
            out,
            format!(
                "{},{},{},{},{}",
                fmt_f64(p.perturbation),
                counts.join(";"),
                p.beta_star
                    .iter()
                    .map(|&v| fmt_f64(v))
                    .collect::<Vec<_>>()
                    .join(";"),
                p.converged,
                p.cross_entropy_after.map(fmt_f64).unwrap_or_default()
            ),
        )?;
    }
    Ok(0)
}

/// Parses `argv` (program name first) and runs the subcommand, writing
/// results to `out` and diagnostics to `err`. Returns the exit code.
pub fn dispatch_to<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(out, "{}", e.render());
                    return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        1
                    } else {
                        0
                    };
                }
                _ => 1,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => fit(a, out),
        Command::FixedPoint(a) => fixed_point(a, out),
        Command::Jacobian(a) => jacobian_cmd(a, out),
        Command::Orbit(a) => orbit_cmd(a, out),
        Command::Synth(a) => synth_cmd(a, out),
        Command::Check(a) => check_cmd(a, out, err),
        Command::Sweep(a) => sweep_cmd(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// [`dispatch_to`] on the process's stdout and stderr.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch_to(argv, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = dispatch_to(
            std::iter::once("sucpa").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        let (code, _, err) = run(&["frobnicate"]);
        assert_eq!(code, 1);
        assert!(err.contains("Usage"), "{err}");
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (code, _, _) = run(&["check", "--list", "--bogus"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(&["--help"]).0, 0);
    }

    #[test]
    fn list_checks() {
        let (code, out, _) = run(&["check", "--list"]);
        assert_eq!(code, 0);
        assert!(out.lines().any(|l| l == "shift-equivariance"));
    }

    #[test]
    fn missing_file_is_validation_error() {
        let (code, _, err) = run(&["fit", "--input", "/nonexistent/x.csv"]);
        assert_eq!(code, 1);
        assert!(err.contains("/nonexistent/x.csv"), "{err}");
    }

    #[test]
    fn synth_then_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let p = path.to_str().unwrap();
        let (code, _, err) = run(&[
            "synth", "--n", "40", "--k", "2", "--priors", "1,3", "--seed", "5", "--output", p,
        ]);
        assert_eq!(code, 0, "{err}");
        let (code, out, err) = run(&["fixed-point", "--input", p]);
        assert_eq!(code, 0, "{err}");
        assert!(out.starts_with("b = "));
        let (code, out, _) = run(&["fixed-point", "--input", p, "--counts", "10,30"]);
        assert_eq!(code, 0);
        assert!(out.contains("mu = "));
    }

    #[test]
    fn three_class_fixed_point_is_labelled_conjectured() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let p = path.to_str().unwrap();
        assert_eq!(run(&["synth", "--n", "30", "--k", "3", "--output", p]).0, 0);
        let (code, out, _) = run(&["fixed-point", "--input", p]);
        assert_eq!(code, 0);
        assert!(out.contains("status = conjectured"));
        assert!(out.contains("representative_fixed_point = 0.0000000000000000e0,"));
    }

    #[test]
    fn negative_ic_values_parse() {
        assert_eq!(parse_f64_list("-1.5, 2").unwrap(), Floats(vec![-1.5, 2.0]));
        assert!(parse_f64_list("1,x").is_err());
        assert!(parse_counts("3,0").is_err());
    }
}
