//! Problem, sample, point, and report files.
//!
//! Problem files are JSON with matrices as arrays of rows:
//!
//! ```json
//! {
//!   "agents": [
//!     {"Q": [[2.0]], "p0": [-1.0], "P": [[0.5]], "rho": [0.3], "r0": 0.1,
//!      "H": [], "g": [], "lower": [0.0], "upper": [1.0]}
//!   ],
//!   "drcc": {"A": [[1.0, 1.0]], "beta": [[1.0]], "b": [0.9],
//!            "epsilon": 0.1, "theta": 0.05, "norm": "L2",
//!            "samples": [[0.0], [0.05]]}
//! }
//! ```
//!
//! `samples` may be omitted when a separate samples file supplies them.
//! Sample and point files are plain text: whitespace-separated floats, one
//! sample per line, `#` starting a comment. Problem and sample writers keep
//! full precision so files round-trip exactly.
//!
//! Report writers round every float to nine significant digits and zero the
//! timing field unless asked for it, so the same run produces identical
//! bytes; non-finite values appear as the strings `"inf"`, `"-inf"`,
//! `"nan"` (JSON has no encoding for them).

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{json, Value};

use crate::casestudy::{SweepRow, Table1Report};
use crate::drcc::{distance_mass, DrccSpec, NormOrder, SampleSet};
use crate::error::Error;
use crate::game::{AgentSpec, BoxBounds, GnepProblem};
use crate::solver::{CertifyReport, EquilibriumResult, EquilibriumStatus};
use crate::Result;

// ---------------------------------------------------------------------------
// Float rendering

/// Round to nine significant decimal digits — the precision of every float
/// in a report file. The result is the double nearest the rounded decimal,
/// so its shortest display is exactly that decimal.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("scientific float form parses back")
}

/// A report float as JSON: rounded when finite, a string otherwise.
fn g9(x: f64) -> Value {
    if x.is_finite() {
        json!(round_sig9(x))
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn g9_seq<'a, I: IntoIterator<Item = &'a f64>>(xs: I) -> Value {
    Value::Array(xs.into_iter().map(|&x| g9(x)).collect())
}

/// A report float as CSV text.
fn g9_csv(x: f64) -> String {
    if x.is_finite() {
        round_sig9(x).to_string()
    } else if x.is_nan() {
        "nan".to_owned()
    } else if x > 0.0 {
        "inf".to_owned()
    } else {
        "-inf".to_owned()
    }
}

/// Serde helper: write a solver status by its display name ("GNE", ...).
pub fn status_as_str<S: Serializer>(
    status: &EquilibriumStatus,
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(&status.to_string())
}

// ---------------------------------------------------------------------------
// Problem files

#[derive(Serialize, Deserialize)]
struct AgentFile {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    p0: Vec<f64>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    rho: Vec<f64>,
    r0: f64,
    #[serde(rename = "H", default)]
    h: Vec<Vec<f64>>,
    #[serde(default)]
    g: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DrccFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    b: Vec<f64>,
    epsilon: f64,
    theta: f64,
    norm: NormOrder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct ProblemFile {
    agents: Vec<AgentFile>,
    drcc: DrccFile,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Rows to a matrix; `fallback_cols` fixes the width of a row-less matrix.
fn to_matrix(rows: &[Vec<f64>], fallback_cols: usize, what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(fallback_cols, Vec::len);
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "{what}: row {bad} has {} entries, row 0 has {ncols}",
            rows[bad].len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl AgentFile {
    fn from_spec(a: &AgentSpec) -> Self {
        AgentFile {
            q: to_rows(&a.q),
            p0: a.p0.iter().copied().collect(),
            p: to_rows(&a.p_cross),
            rho: a.rho.iter().copied().collect(),
            r0: a.r0,
            h: to_rows(&a.h),
            g: a.g.iter().copied().collect(),
            lower: a.bounds.lower.iter().copied().collect(),
            upper: a.bounds.upper.iter().copied().collect(),
        }
    }

    fn into_spec(self, idx: usize) -> Result<AgentSpec> {
        let dim = self.lower.len();
        let ctx = |field: &str| format!("agent {idx} {field}");
        Ok(AgentSpec {
            q: to_matrix(&self.q, dim, &ctx("Q"))?,
            p0: DVector::from_vec(self.p0),
            p_cross: to_matrix(&self.p, 0, &ctx("P"))?,
            rho: DVector::from_vec(self.rho),
            r0: self.r0,
            h: to_matrix(&self.h, dim, &ctx("H"))?,
            g: DVector::from_vec(self.g),
            bounds: BoxBounds::new(DVector::from_vec(self.lower), DVector::from_vec(self.upper))?,
        })
    }
}

/// Render a problem as a problem file (samples embedded, full precision).
pub fn problem_to_json(problem: &GnepProblem) -> String {
    let file = ProblemFile {
        agents: problem.agents.iter().map(AgentFile::from_spec).collect(),
        drcc: DrccFile {
            a: to_rows(&problem.drcc.a),
            beta: to_rows(&problem.drcc.beta),
            b: problem.drcc.b.iter().copied().collect(),
            epsilon: problem.drcc.epsilon,
            theta: problem.drcc.theta,
            norm: problem.drcc.norm,
            samples: Some(
                (0..problem.drcc.samples.len())
                    .map(|k| problem.drcc.samples.get(k).iter().copied().collect())
                    .collect(),
            ),
        },
    };
    let mut text = serde_json::to_string_pretty(&file).expect("problem file serializes");
    text.push('\n');
    text
}

/// Parse a problem file; `samples` (from a samples file) replaces any
/// embedded ones and is required when the file embeds none.
pub fn problem_from_json(text: &str, samples: Option<SampleSet>) -> Result<GnepProblem> {
    let file: ProblemFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("problem file: {e}")))?;
    let samples = match (samples, file.drcc.samples) {
        (Some(s), _) => s,
        (None, Some(rows)) => SampleSet::new(rows.into_iter().map(DVector::from_vec).collect())?,
        (None, None) => {
            return Err(Error::Parse(
                "problem file embeds no drcc.samples and no samples file was given".into(),
            ))
        }
    };
    let drcc = DrccSpec::new(
        to_matrix(&file.drcc.a, 0, "drcc.A")?,
        to_matrix(&file.drcc.beta, 0, "drcc.beta")?,
        DVector::from_vec(file.drcc.b),
        file.drcc.epsilon,
        file.drcc.theta,
        file.drcc.norm,
        samples,
    )?;
    let agents = file
        .agents
        .into_iter()
        .enumerate()
        .map(|(i, a)| a.into_spec(i))
        .collect::<Result<Vec<_>>>()?;
    GnepProblem::new(agents, drcc)
}

pub fn read_problem(path: impl AsRef<Path>, samples: Option<SampleSet>) -> Result<GnepProblem> {
    problem_from_json(&fs::read_to_string(path)?, samples)
}

pub fn write_problem(path: impl AsRef<Path>, problem: &GnepProblem) -> Result<()> {
    Ok(fs::write(path, problem_to_json(problem))?)
}

/// Rebuild a problem with a different chance level and/or radius.
pub fn override_drcc(
    problem: GnepProblem,
    epsilon: Option<f64>,
    theta: Option<f64>,
) -> Result<GnepProblem> {
    if epsilon.is_none() && theta.is_none() {
        return Ok(problem);
    }
    let drcc = DrccSpec::new(
        problem.drcc.a.clone(),
        problem.drcc.beta.clone(),
        problem.drcc.b.clone(),
        epsilon.unwrap_or(problem.drcc.epsilon),
        theta.unwrap_or(problem.drcc.theta),
        problem.drcc.norm,
        problem.drcc.samples.clone(),
    )?;
    GnepProblem::new(problem.agents, drcc)
}

// ---------------------------------------------------------------------------
// Sample and point files

/// Parse whitespace-separated samples, one per line; `#` starts a comment.
pub fn samples_from_text(text: &str) -> Result<SampleSet> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let vals = body
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| {
                    Error::Parse(format!("samples line {}: {tok:?}: {e}", lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(DVector::from_vec(vals));
    }
    SampleSet::new(rows)
}

pub fn samples_to_text(samples: &SampleSet) -> String {
    let mut out = String::new();
    for k in 0..samples.len() {
        let row: Vec<String> = samples.get(k).iter().map(f64::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<SampleSet> {
    samples_from_text(&fs::read_to_string(path)?)
}

pub fn write_samples(path: impl AsRef<Path>, samples: &SampleSet) -> Result<()> {
    Ok(fs::write(path, samples_to_text(samples))?)
}

/// Parse a strategy profile: whitespace/newline-separated floats (`#`
/// comments allowed).
pub fn point_from_text(text: &str) -> Result<DVector<f64>> {
    let mut vals = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        for tok in body.split_whitespace() {
            vals.push(tok.parse::<f64>().map_err(|e| {
                Error::Parse(format!("point line {}: {tok:?}: {e}", lineno + 1))
            })?);
        }
    }
    if vals.is_empty() {
        return Err(Error::Parse("point file holds no numbers".into()));
    }
    Ok(DVector::from_vec(vals))
}

pub fn read_point(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    point_from_text(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Report files

/// Solver outcome as a report file. `timings` keeps real wall-clock times;
/// off (the default for file output) they are zeroed for reproducible bytes.
pub fn result_to_json(res: &EquilibriumResult, timings: bool) -> String {
    let per_node: Vec<Value> = res
        .per_node
        .iter()
        .map(|n| {
            json!({
                "q": n.q,
                "best_value": g9(n.best_value),
                "starts_run": n.starts_run,
                "empty": n.empty,
                "pruned": n.pruned,
            })
        })
        .collect();
    let v = json!({
        "status": res.status.to_string(),
        "residual": g9(res.residual),
        "x": res.x.as_ref().map_or(Value::Null, |x| g9_seq(x.iter())),
        "aux": res.aux.as_ref().map_or(Value::Null, |a| {
            json!({"tau": g9(a.tau), "s": g9_seq(a.s.iter())})
        }),
        "q": res.q.as_ref().map_or(Value::Null, |q| json!(q)),
        "per_node": per_node,
        "feasible_set_empty": res.feasible_set_empty,
        "nodes_examined": res.nodes_examined,
        "wall_ms": if timings { res.wall_ms } else { 0 },
    });
    let mut text = serde_json::to_string_pretty(&v).expect("report serializes");
    text.push('\n');
    text
}

/// Certification breakdown for a point: the mass the point attains versus
/// the mass the radius demands, private feasibility, and per-agent gaps.
pub fn certify_to_json(rep: &CertifyReport, problem: &GnepProblem, x: &DVector<f64>) -> String {
    let target = problem.drcc.theta * problem.drcc.samples.len() as f64;
    let mass = distance_mass(&problem.drcc, x);
    let v = json!({
        "certified": rep.certified,
        "drcc": {
            "ok": rep.drcc_ok,
            "distance_mass": g9(mass),
            "required_mass": g9(target),
        },
        "local_feasible": rep.local_ok,
        "residual": g9(rep.residual),
        "gaps": g9_seq(&rep.gaps),
        "q": rep.q,
        "aux": {"tau": g9(rep.aux.tau), "s": g9_seq(rep.aux.s.iter())},
        "x": g9_seq(x.iter()),
    });
    let mut text = serde_json::to_string_pretty(&v).expect("report serializes");
    text.push('\n');
    text
}

/// Market-table report file.
pub fn table1_to_json(report: &Table1Report, timings: bool) -> String {
    let rows: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "label": r.label,
                "prices": g9_seq(&r.prices),
                "residual": g9(r.residual),
                "status": r.status.to_string(),
                "theta": g9(r.theta),
                "wall_ms": if timings { r.wall_ms } else { 0 },
            })
        })
        .collect();
    let mut text =
        serde_json::to_string_pretty(&json!({ "rows": rows })).expect("report serializes");
    text.push('\n');
    text
}

/// Out-of-sample validation report: the violation budget, the radius the
/// equilibrium was solved under, and the Monte Carlo estimate at it.
pub fn violation_to_json(
    epsilon: f64,
    theta: f64,
    x: &DVector<f64>,
    est: &crate::casestudy::ViolationEstimate,
    margin: f64,
    ok: bool,
) -> String {
    let v = json!({
        "epsilon": g9(epsilon),
        "theta": g9(theta),
        "x": g9_seq(x.iter()),
        "violation": {
            "rate": g9(est.rate),
            "lo": g9(est.lo),
            "hi": g9(est.hi),
            "draws": est.draws,
        },
        "margin": g9(margin),
        "within_budget": ok,
    });
    let mut text = serde_json::to_string_pretty(&v).expect("report serializes");
    text.push('\n');
    text
}

/// Market-size sweep as CSV.
pub fn sweep_to_csv(rows: &[SweepRow], timings: bool) -> String {
    let mut out = String::from("I,price,residual,status,wall_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.stations,
            g9_csv(r.price),
            g9_csv(r.residual),
            r.status,
            if timings { r.wall_ms } else { 0 }
        ));
    }
    out
}
