//! Problem files, count sidecars and orbit exports.
//!
//! Problem CSV: header `p_1,...,p_K[,label]`, one sample per line, labels are
//! one-based class indices. Counts come from a `--counts` override, a JSON
//! sidecar next to the CSV (`scores.csv` -> `scores.json`, shaped
//! `{"counts": [..], "k": K, "n": N}`), or the label histogram, in that
//! order. A JSON problem file carries everything in one object.
//!
//! Every float written by this module uses 17 significant digits so doubles
//! round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SucpaError};
use crate::map::Orbit;
use crate::problem::{
    BetaVector, ClassCounts, PosteriorMatrix, SucpaProblem, POSITIVITY_THRESHOLD, ROW_SUM_TOLERANCE,
};
use crate::two_class::{slope_trace, FixedLine};

/// Value substituted for tiny entries under [`ZeroPolicy::Clamp`].
pub const CLAMP_FLOOR: f64 = 1e-12;

/// Formats a double with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemFormat {
    Csv,
    Json,
}

impl ProblemFormat {
    /// `.json` means JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ProblemFormat::Json,
            _ => ProblemFormat::Csv,
        }
    }
}

impl FromStr for ProblemFormat {
    type Err = SucpaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ProblemFormat::Csv),
            "json" => Ok(ProblemFormat::Json),
            other => Err(SucpaError::invalid(format!("unknown format '{other}'"))),
        }
    }
}

/// What to do with score entries that are zero (or nearly so).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroPolicy {
    #[default]
    Reject,
    /// Raise entries below [`CLAMP_FLOOR`] to it and renormalize the row.
    Clamp,
}

impl FromStr for ZeroPolicy {
    type Err = SucpaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(ZeroPolicy::Reject),
            "clamp" => Ok(ZeroPolicy::Clamp),
            other => Err(SucpaError::invalid(format!(
                "unknown zero policy '{other}' (expected reject or clamp)"
            ))),
        }
    }
}

/// A parsed and validated problem file.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub format: ProblemFormat,
    pub path: PathBuf,
    pub problem: SucpaProblem,
    /// Zero-based labels, when the file has them.
    pub labels: Option<Vec<usize>>,
    /// Number of entries raised to [`CLAMP_FLOOR`].
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsSidecar {
    pub counts: Vec<u64>,
    pub k: usize,
    pub n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonProblem {
    k: usize,
    n: usize,
    counts: Vec<u64>,
    posteriors: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

/// Path of the counts sidecar belonging to a CSV problem file.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

struct RawRows {
    rows: Vec<Vec<f64>>,
    lines: Vec<u64>,
    labels: Option<Vec<usize>>,
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> SucpaError {
    SucpaError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_csv_rows(path: &Path) -> Result<RawRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => SucpaError::io(path, io),
            other => parse_err(path, 1, format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_label = names.last() == Some(&"label");
    let k = names.len() - usize::from(has_label);
    for (j, name) in names[..k].iter().enumerate() {
        if *name != format!("p_{}", j + 1) {
            return Err(parse_err(
                path,
                1,
                format!(
                    "header column {} is '{name}', expected 'p_{}'",
                    j + 1,
                    j + 1
                ),
            ));
        }
    }
    if k < 2 {
        return Err(parse_err(path, 1, "need at least two probability columns"));
    }

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut labels = has_label.then(Vec::new);
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .take(k)
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("'{f}' is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(labels) = labels.as_mut() {
            let f = &record[k];
            let y: usize = f
                .parse()
                .map_err(|_| parse_err(path, line, format!("label '{f}' is not an integer")))?;
            if y == 0 || y > k {
                return Err(parse_err(
                    path,
                    line,
                    format!("label {y} is outside 1..={k}"),
                ));
            }
            labels.push(y - 1);
        }
        rows.push(row);
        lines.push(line);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    Ok(RawRows {
        rows,
        lines,
        labels,
    })
}

fn read_json_problem(path: &Path) -> Result<(RawRows, ClassCounts)> {
    let text = std::fs::read_to_string(path).map_err(|e| SucpaError::io(path, e))?;
    let doc: JsonProblem =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.line() as u64, e.to_string()))?;
    if doc.posteriors.len() != doc.n || doc.counts.len() != doc.k {
        return Err(SucpaError::invalid(format!(
            "{}: declared k = {}, n = {} disagree with the data",
            path.display(),
            doc.k,
            doc.n
        )));
    }
    let labels = match doc.labels {
        Some(l) => Some(
            l.into_iter()
                .map(|y| {
                    if y == 0 || y > doc.k {
                        Err(SucpaError::invalid(format!(
                            "label {y} is outside 1..={}",
                            doc.k
                        )))
                    } else {
                        Ok(y - 1)
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok((
        RawRows {
            lines: (0..doc.n as u64).map(|i| i + 1).collect(),
            rows: doc.posteriors,
            labels,
        },
        ClassCounts::new(doc.counts)?,
    ))
}

/// Applies the zero policy and checks row sums, reporting the offending row.
fn sanitize(raw: &mut RawRows, policy: ZeroPolicy, path: &Path) -> Result<usize> {
    let mut clamped = 0;
    for (i, (row, &line)) in raw.rows.iter_mut().zip(&raw.lines).enumerate() {
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SucpaError::invalid(format!(
                "{}: row {i} (line {line}) has a negative or non-finite entry",
                path.display()
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(SucpaError::invalid(format!(
                "{}: row {i} (line {line}) sums to {s}, expected 1",
                path.display()
            )));
        }
        match policy {
            ZeroPolicy::Reject => {
                if let Some(j) = row.iter().position(|&p| p < POSITIVITY_THRESHOLD) {
                    return Err(SucpaError::invalid(format!(
                        "{}: row {i} (line {line}), column {} is zero; use the clamp policy to floor it",
                        path.display(),
                        j + 1
                    )));
                }
            }
            ZeroPolicy::Clamp => {
                let mut touched = false;
                for p in row.iter_mut() {
                    if *p < CLAMP_FLOOR {
                        *p = CLAMP_FLOOR;
                        clamped += 1;
                        touched = true;
                    }
                }
                if touched {
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= s);
                }
            }
        }
    }
    if clamped > 0 {
        log::warn!(
            "{}: clamped {clamped} score entries to {CLAMP_FLOOR:e}",
            path.display()
        );
    }
    Ok(clamped)
}

fn counts_from_labels(labels: &[usize], k: usize) -> Result<ClassCounts> {
    let mut counts = vec![0u64; k];
    for &y in labels {
        counts[y] += 1;
    }
    ClassCounts::new(counts)
}

/// Reads, sanitizes and validates a problem file.
pub fn load_problem(
    path: &Path,
    format: ProblemFormat,
    zero_policy: ZeroPolicy,
    counts_override: Option<ClassCounts>,
) -> Result<ProblemFile> {
    let (mut raw, embedded) = match format {
        ProblemFormat::Csv => (read_csv_rows(path)?, None),
        ProblemFormat::Json => {
            let (raw, counts) = read_json_problem(path)?;
            (raw, Some(counts))
        }
    };
    let clamped = sanitize(&mut raw, zero_policy, path)?;
    let posteriors = PosteriorMatrix::from_rows(&raw.rows)?;
    let k = posteriors.k();

    let counts = match (counts_override, embedded) {
        (Some(c), _) => c,
        (None, Some(c)) => c,
        (None, None) => {
            let side = sidecar_path(path);
            if side.exists() {
                let text = std::fs::read_to_string(&side).map_err(|e| SucpaError::io(&side, e))?;
                let doc: CountsSidecar = serde_json::from_str(&text)
                    .map_err(|e| parse_err(&side, e.line() as u64, e.to_string()))?;
                if doc.k != doc.counts.len() || doc.n as u64 != doc.counts.iter().sum::<u64>() {
                    return Err(SucpaError::invalid(format!(
                        "{}: k and n disagree with counts",
                        side.display()
                    )));
                }
                ClassCounts::new(doc.counts)?
            } else if let Some(labels) = &raw.labels {
                counts_from_labels(labels, k)?
            } else {
                return Err(SucpaError::invalid(format!(
                    "{}: no class counts (pass --counts, add {}, or include a label column)",
                    path.display(),
                    side.display()
                )));
            }
        }
    };

    Ok(ProblemFile {
        format,
        path: path.to_path_buf(),
        problem: SucpaProblem::new(posteriors, counts)?,
        labels: raw.labels,
        clamped,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| SucpaError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| SucpaError::io(path, std::io::Error::other(e)))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| SucpaError::io(path, e))
}

/// Writes a problem. CSV output also writes the counts sidecar.
pub fn save_problem(
    path: &Path,
    format: ProblemFormat,
    problem: &SucpaProblem,
    labels: Option<&[usize]>,
) -> Result<()> {
    let k = problem.k();
    if let Some(l) = labels {
        if l.len() != problem.n() || l.iter().any(|&y| y >= k) {
            return Err(SucpaError::invalid("labels do not match the problem"));
        }
    }
    match format {
        ProblemFormat::Csv => {
            let mut w = create(path)?;
            let io = |e| SucpaError::io(path, e);
            let mut header: Vec<String> = (1..=k).map(|j| format!("p_{j}")).collect();
            if labels.is_some() {
                header.push("label".into());
            }
            writeln!(w, "{}", header.join(",")).map_err(io)?;
            for (i, row) in problem.posteriors().rows().enumerate() {
                let mut fields: Vec<String> = row.iter().map(|&p| fmt_f64(p)).collect();
                if let Some(l) = labels {
                    fields.push((l[i] + 1).to_string());
                }
                writeln!(w, "{}", fields.join(",")).map_err(io)?;
            }
            w.flush().map_err(io)?;
            write_json(
                &sidecar_path(path),
                &CountsSidecar {
                    counts: problem.counts().as_slice().to_vec(),
                    k,
                    n: problem.n(),
                },
            )
        }
        ProblemFormat::Json => write_json(
            path,
            &JsonProblem {
                k,
                n: problem.n(),
                counts: problem.counts().as_slice().to_vec(),
                posteriors: problem.posteriors().rows().map(<[f64]>::to_vec).collect(),
                labels: labels.map(|l| l.iter().map(|y| y + 1).collect()),
            },
        ),
    }
}

/// Fixed-line parameters written next to a two-class orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedLineRecord {
    pub b: f64,
    pub mu: f64,
    pub v: [f64; 2],
}

/// JSON sidecar of an orbit export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSidecar {
    pub k: usize,
    pub counts: Vec<u64>,
    pub steps: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_line: Option<FixedLineRecord>,
    /// `K >= 3`: converged point shifted so its first coordinate is zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub representative_fixed_point: Option<Vec<f64>>,
    /// Direction of the (conjectured) line of fixed points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_set_direction: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_set_status: Option<String>,
}

/// `beta - beta_1 * 1`.
pub fn normalize_first_coordinate(beta: &[f64]) -> Vec<f64> {
    beta.iter().map(|b| b - beta[0]).collect()
}

/// Writes an orbit as CSV (`t, beta_1..K, delta_1..K[, intercept, slope]`)
/// plus a JSON sidecar with the same stem.
pub fn export_orbit(
    orbit: &Orbit,
    fixed_line: Option<&FixedLine>,
    counts: &ClassCounts,
    path: &Path,
) -> Result<()> {
    let k = orbit.dim();
    if counts.k() != k {
        return Err(SucpaError::ShapeMismatch {
            expected: format!("{k} class counts"),
            got: format!("{}", counts.k()),
        });
    }
    let two = k == 2;
    let mut w = create(path)?;
    let io = |e| SucpaError::io(path, e);

    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|j| format!("beta_{j}")));
    header.extend((1..=k).map(|j| format!("delta_{j}")));
    if two {
        header.push("intercept".into());
        header.push("slope".into());
    }
    writeln!(w, "{}", header.join(",")).map_err(io)?;

    let slopes = if two { slope_trace(orbit) } else { Vec::new() };
    for (t, point) in orbit.points().iter().enumerate() {
        let mut fields = vec![t.to_string()];
        fields.extend(point.iter().map(|&b| fmt_f64(b)));
        match orbit.increments().get(t) {
            Some(d) => fields.extend(d.iter().map(|&x| fmt_f64(x))),
            None => fields.extend(std::iter::repeat_n(String::new(), k)),
        }
        if two {
            fields.push(fmt_f64(point[1] - point[0]));
            fields.push(
                slopes
                    .get(t)
                    .copied()
                    .flatten()
                    .map(fmt_f64)
                    .unwrap_or_default(),
            );
        }
        writeln!(w, "{}", fields.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let (fixed_line, representative, direction, status) = if two {
        (
            fixed_line.map(|f| FixedLineRecord {
                b: f.intercept_b,
                mu: f.stable_eigenvalue_mu,
                v: f.stable_eigenvector,
            }),
            None,
            None,
            None,
        )
    } else {
        (
            None,
            orbit.limit().map(|l| normalize_first_coordinate(l)),
            Some(vec![1.0; k]),
            Some("conjectured".to_string()),
        )
    };
    write_json(
        &path.with_extension("json"),
        &OrbitSidecar {
            k,
            counts: counts.as_slice().to_vec(),
            steps: orbit.steps(),
            converged: orbit.converged(),
            fixed_line,
            representative_fixed_point: representative,
            fixed_set_direction: direction,
            fixed_set_status: status,
        },
    )
}

/// Reads the points of an orbit export back. Increments are recomputed from
/// the points; the exported `delta` columns are returned alongside.
pub fn read_orbit_export(path: &Path) -> Result<(Orbit, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let k = headers.iter().filter(|h| h.starts_with("beta_")).count();
    let mut orbit: Option<Orbit> = None;
    let mut deltas = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |f: &str| -> Result<f64> {
            f.parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("'{f}' is not a number")))
        };
        let beta = (1..=k)
            .map(|j| num(&record[j]))
            .collect::<Result<Vec<_>>>()?;
        if !record[k + 1].is_empty() {
            deltas.push(
                (k + 1..=2 * k)
                    .map(|j| num(&record[j]))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let beta = BetaVector::new(beta)?;
        match orbit.as_mut() {
            None => orbit = Some(Orbit::starting_at(beta)),
            Some(o) => o.push(beta),
        }
    }
    let orbit = orbit.ok_or_else(|| parse_err(path, 1, "orbit export has no rows"))?;
    Ok((orbit, deltas))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn csv_happy_path_with_label_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.csv",
            "p_1,p_2,label\n0.9,0.1,1\n0.2,0.8,2\n0.6,0.4,1\n0.3,0.7,2\n",
        );
        let f = load_problem(&p, ProblemFormat::Csv, ZeroPolicy::Reject, None).unwrap();
        assert_eq!(f.problem.n(), 4);
        assert_eq!(f.problem.counts().as_slice(), &[2, 2]);
        assert_eq!(f.labels.unwrap(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn sidecar_and_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "p_1,p_2\n0.9,0.1\n0.2,0.8\n0.5,0.5\n");
        write(
            dir.path(),
            "s.json",
            r#"{"counts": [1, 2], "k": 2, "n": 3}"#,
        );
        let f = load_problem(&p, ProblemFormat::Csv, ZeroPolicy::Reject, None).unwrap();
        assert_eq!(f.problem.counts().as_slice(), &[1, 2]);
        let c = ClassCounts::new(vec![2, 1]).unwrap();
        let f = load_problem(&p, ProblemFormat::Csv, ZeroPolicy::Reject, Some(c)).unwrap();
        assert_eq!(f.problem.counts().as_slice(), &[2, 1]);
    }

    #[test]
    fn bad_row_sum_cites_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "p_1,p_2\n0.5,0.5\n0.5,0.4\n");
        let c = ClassCounts::new(vec![1, 1]).unwrap();
        let err = load_problem(&p, ProblemFormat::Csv, ZeroPolicy::Reject, Some(c)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 1") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn zero_entry_reject_and_clamp() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "p_1,p_2\n1.0,0.0\n0.4,0.6\n");
        let c = ClassCounts::new(vec![1, 1]).unwrap();
        assert!(load_problem(&p, ProblemFormat::Csv, ZeroPolicy::Reject, Some(c.clone())).is_err());
        let f = load_problem(&p, ProblemFormat::Csv, ZeroPolicy::Clamp, Some(c)).unwrap();
        assert_eq!(f.clamped, 1);
        let row = f.problem.posteriors().row(0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(row[1] > 0.0);
    }

    #[test]
    fn parse_error_has_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "p_1,p_2\n0.5,0.5\n0.5,abc\n");
        let c = ClassCounts::new(vec![1, 1]).unwrap();
        match load_problem(&p, ProblemFormat::Csv, ZeroPolicy::Reject, Some(c)) {
            Err(SucpaError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s.csv", "a,b\n0.5,0.5\n");
        let c = ClassCounts::new(vec![1, 1]).unwrap();
        assert!(load_problem(&p, ProblemFormat::Csv, ZeroPolicy::Reject, Some(c)).is_err());
    }

    #[test]
    fn json_problem_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.json",
            r#"{"k": 2, "n": 2, "counts": [1, 1], "posteriors": [[0.8, 0.2], [0.3, 0.7]], "labels": [1, 2]}"#,
        );
        let f = load_problem(&p, ProblemFormat::Json, ZeroPolicy::Reject, None).unwrap();
        assert_eq!(f.labels.unwrap(), vec![0, 1]);
        assert_eq!(f.problem.posteriors().get(1, 1), 0.7);
    }

    #[test]
    fn fmt_has_17_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        let x = std::f64::consts::PI;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
}
