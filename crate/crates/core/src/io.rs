//! File formats: bracket JSON, trace CSV with a bracket sidecar, and
//! helpers for writing matrices as nested row arrays.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::algebra::{Bracket, Operator};
use crate::error::{Error, Result};
use crate::flow::FlowTrace;

/// Writes a matrix as `[[row 0], [row 1], …]`.
pub fn serialize_matrix<S: Serializer>(m: &Operator, s: S) -> std::result::Result<S::Ok, S::Error> {
    matrix_rows(m).serialize(s)
}

pub fn matrix_rows(m: &Operator) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

/// `{ "n": …, "entries": [ { "i", "j", "k", "value" } ] }`, 1-based with
/// i < j; unlisted entries are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketJson {
    pub n: usize,
    pub entries: Vec<BracketEntry>,
}

impl BracketJson {
    pub fn from_bracket(b: &Bracket) -> Self {
        Self {
            n: b.dim(),
            entries: b
                .canonical_entries()
                .into_iter()
                .map(|(i, j, k, value)| BracketEntry {
                    i: i + 1,
                    j: j + 1,
                    k: k + 1,
                    value,
                })
                .collect(),
        }
    }

    pub fn to_bracket(&self) -> Result<Bracket> {
        let n = self.n;
        if n == 0 {
            return Err(Error::Schema("n must be at least 1".into()));
        }
        let mut seen = HashSet::new();
        let mut b = Bracket::zero(n);
        for (idx, e) in self.entries.iter().enumerate() {
            let name = format!("entry {idx} (i={}, j={}, k={})", e.i, e.j, e.k);
            if e.i == 0 || e.j == 0 || e.k == 0 || e.i > n || e.j > n || e.k > n {
                return Err(Error::Schema(format!(
                    "{name}: indices must lie in 1..={n}"
                )));
            }
            if e.i >= e.j {
                return Err(Error::Schema(format!("{name}: requires i < j")));
            }
            if !e.value.is_finite() {
                return Err(Error::Schema(format!("{name}: value is not finite")));
            }
            if !seen.insert((e.i, e.j, e.k)) {
                return Err(Error::Schema(format!("{name}: duplicate entry")));
            }
            b.set(e.i - 1, e.j - 1, e.k - 1, e.value);
        }
        Ok(b)
    }
}

pub fn bracket_from_json_str(s: &str) -> Result<Bracket> {
    let json: BracketJson = serde_json::from_str(s)?;
    json.to_bracket()
}

pub fn bracket_to_json_string(b: &Bracket) -> Result<String> {
    Ok(serde_json::to_string_pretty(&BracketJson::from_bracket(b))?)
}

pub fn load_bracket(path: &Path) -> Result<Bracket> {
    let mut s = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut s)?;
    bracket_from_json_str(&s)
}

pub fn save_bracket(path: &Path, b: &Bracket) -> Result<()> {
    write_json(path, &BracketJson::from_bracket(b))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// One row of the trace CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub mu_norm: f64,
    pub scal: f64,
    pub tr_ric2: f64,
    pub grad_norm: f64,
    pub r: f64,
    pub jacobi_residual: f64,
}

pub fn trace_rows(trace: &FlowTrace) -> Vec<TraceRow> {
    trace
        .times
        .iter()
        .zip(&trace.diagnostics)
        .map(|(&t, d)| TraceRow {
            t,
            mu_norm: d.mu_norm,
            scal: d.scal,
            tr_ric2: d.tr_ric2,
            grad_norm: d.grad_norm,
            r: d.r,
            jacobi_residual: d.jacobi_residual,
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(w: W, trace: &FlowTrace) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in trace_rows(trace) {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Bracket snapshot for one trace sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub index: usize,
    pub t: f64,
    pub bracket: BracketJson,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub n: usize,
    pub rate: String,
    pub snapshots: Vec<Snapshot>,
}

pub fn trace_sidecar(trace: &FlowTrace) -> TraceSidecar {
    TraceSidecar {
        n: trace.n,
        rate: trace.rate.label(),
        snapshots: trace
            .times
            .iter()
            .zip(&trace.brackets)
            .enumerate()
            .map(|(index, (&t, b))| Snapshot {
                index,
                t,
                bracket: BracketJson::from_bracket(b),
                h: trace.h.as_ref().map(|h| matrix_rows(&h[index])),
            })
            .collect(),
    }
}

/// Writes `<path>` as CSV and `<path>.brackets.json` as the sidecar.
pub fn save_trace(path: &Path, trace: &FlowTrace) -> Result<()> {
    write_trace_csv(BufWriter::new(File::create(path)?), trace)?;
    write_json(&sidecar_path(path), &trace_sidecar(trace))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".brackets.json");
    s.into()
}
