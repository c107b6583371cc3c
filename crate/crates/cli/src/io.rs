//! File formats: long-format data, truth, memberships, cluster tables,
//! traces and versioned JSON documents.
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, always with a `.` decimal separator. Every file is written
//! to a temporary sibling and renamed into place.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mixcourse_core::saem::{Block, TraceRow};
use mixcourse_core::{Dataset, IndividualParams, MembershipMatrix, Patient, Visit};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Version written into every JSON document.
pub const SCHEMA_VERSION: u32 = 1;

pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x != 0.0 && !(1e-5..1e16).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| CliError::Input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Rows of strings rendered as CSV and written atomically.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, &self.to_bytes())
    }
}

/// A parsed CSV with its header, for column lookup by name.
struct CsvFile {
    path: PathBuf,
    header: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl CsvFile {
    fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
        let records = r.records().collect::<Result<Vec<_>, _>>().map_err(|e| csv_error(path, e))?;
        Ok(Self { path: path.to_path_buf(), header, records })
    }

    fn column(&self, name: &str) -> CliResult<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| CliError::parse(&self.path, format!("missing column {name:?}")))
    }

    fn line(&self, r: usize) -> u64 {
        self.records[r].position().map_or(r as u64 + 2, |p| p.line())
    }

    fn number(&self, r: usize, c: usize) -> CliResult<f64> {
        self.optional(r, c)?.ok_or_else(|| CliError::parse(&self.path, format!("line {}, column {}: missing value", self.line(r), self.header[c])))
    }

    fn optional(&self, r: usize, c: usize) -> CliResult<Option<f64>> {
        let s = &self.records[r][c];
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| CliError::parse(&self.path, format!("line {}, column {}: cannot parse {s:?} as a number", self.line(r), self.header[c])))
    }

    fn cluster(&self, r: usize, c: usize, k: usize) -> CliResult<usize> {
        let s = &self.records[r][c];
        match s.parse::<usize>() {
            Ok(l) if (1..=k).contains(&l) => Ok(l - 1),
            _ => Err(CliError::parse(&self.path, format!("line {}, column {}: {s:?} is not a cluster in 1..={k}", self.line(r), self.header[c]))),
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        },
        _ => CliError::parse(path, e.to_string()),
    }
}

/// Writes `patient_id,time,<features…>` with empty cells for missing values.
pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let mut t = Table::new(["patient_id".to_string(), "time".to_string()].into_iter().chain(data.features().iter().cloned()));
    for p in data.patients() {
        for v in &p.visits {
            let mut row = vec![p.id.clone(), fmt_num(v.time)];
            row.extend(v.values.iter().map(|y| fmt_opt(*y)));
            t.push(row);
        }
    }
    t.write(path)
}

/// Reads the long format; rows are grouped by patient in order of first
/// appearance and visits are sorted by time.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let f = CsvFile::read(path)?;
    if f.header.len() < 3 || f.header[0] != "patient_id" || f.header[1] != "time" {
        return Err(CliError::parse(path, "header must start with patient_id,time followed by at least one feature"));
    }
    let features: Vec<String> = f.header[2..].to_vec();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut patients: Vec<Patient> = Vec::new();
    for r in 0..f.records.len() {
        let id = f.records[r][0].to_string();
        if id.is_empty() {
            return Err(CliError::parse(path, format!("line {}: empty patient_id", f.line(r))));
        }
        let time = f.number(r, 1)?;
        let values = (2..f.header.len()).map(|c| f.optional(r, c)).collect::<CliResult<Vec<_>>>()?;
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            patients.push(Patient { id, visits: Vec::new() });
            patients.len() - 1
        });
        patients[slot].visits.push(Visit { time, values });
    }
    for p in &mut patients {
        p.visits.sort_by(|a, b| a.time.total_cmp(&b.time));
    }
    Dataset::new(features, patients).map_err(|e| CliError::parse(path, e.to_string()))
}

/// Per-patient truth of a simulation; clusters are 0-based in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub patient_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub individuals: Vec<IndividualParams>,
}

fn source_columns(n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(|l| format!("source_{l}"))
}

/// Writes `patient_id,cluster,tau,xi,source_1…` with 1-based clusters.
pub fn write_truth(path: &Path, truth: &Truth) -> CliResult<()> {
    let ns = truth.individuals.first().map_or(0, |z| z.sources.len());
    let mut t = Table::new(["patient_id", "cluster", "tau", "xi"].into_iter().map(String::from).chain(source_columns(ns)));
    for ((id, &c), z) in truth.patient_ids.iter().zip(&truth.labels).zip(&truth.individuals) {
        let mut row = vec![id.clone(), (c + 1).to_string(), fmt_num(z.tau), fmt_num(z.xi)];
        row.extend(z.sources.iter().map(|&s| fmt_num(s)));
        t.push(row);
    }
    t.write(path)
}

pub fn read_truth(path: &Path, n_clusters: usize) -> CliResult<Truth> {
    let f = CsvFile::read(path)?;
    let (id, cl, tau, xi) = (f.column("patient_id")?, f.column("cluster")?, f.column("tau")?, f.column("xi")?);
    let sources: Vec<usize> = f.header.iter().enumerate().filter(|(_, h)| h.starts_with("source_")).map(|(j, _)| j).collect();
    let mut truth = Truth { patient_ids: Vec::new(), labels: Vec::new(), individuals: Vec::new() };
    for r in 0..f.records.len() {
        truth.patient_ids.push(f.records[r][id].to_string());
        truth.labels.push(f.cluster(r, cl, n_clusters)?);
        let s = sources.iter().map(|&j| f.number(r, j)).collect::<CliResult<Vec<_>>>()?;
        truth.individuals.push(IndividualParams::new(f.number(r, tau)?, f.number(r, xi)?, s));
    }
    Ok(truth)
}

/// Writes `patient_id,cluster,p_1…p_k`; `cluster` is the 1-based argmax.
pub fn write_membership(path: &Path, ids: &[String], membership: &MembershipMatrix) -> CliResult<()> {
    let k = membership.n_clusters();
    let mut t = Table::new(["patient_id".to_string(), "cluster".to_string()].into_iter().chain((1..=k).map(|c| format!("p_{c}"))));
    for (i, (id, label)) in ids.iter().zip(membership.hard_labels()).enumerate() {
        let mut row = vec![id.clone(), (label + 1).to_string()];
        row.extend(membership.row(i).iter().map(|&p| fmt_num(p)));
        t.push(row);
    }
    t.write(path)
}

/// Patient ids, 0-based labels and the probabilities.
pub fn read_membership(path: &Path) -> CliResult<(Vec<String>, Vec<usize>, MembershipMatrix)> {
    let f = CsvFile::read(path)?;
    let (id, cl) = (f.column("patient_id")?, f.column("cluster")?);
    let probs: Vec<usize> = (1..).map_while(|c| f.column(&format!("p_{c}")).ok()).collect();
    if probs.is_empty() {
        return Err(CliError::parse(path, "no p_1… columns"));
    }
    let (mut ids, mut labels, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..f.records.len() {
        ids.push(f.records[r][id].to_string());
        labels.push(f.cluster(r, cl, probs.len())?);
        rows.push(probs.iter().map(|&j| f.number(r, j)).collect::<CliResult<Vec<_>>>()?);
    }
    let m = MembershipMatrix::from_rows(&rows).map_err(|e| CliError::parse(path, e.to_string()))?;
    Ok((ids, labels, m))
}

/// Cluster-level estimates: proportion and `(τ̄, ξ̄, w̄_1…w̄_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTable {
    pub features: Vec<String>,
    pub proportions: Vec<f64>,
    pub summaries: Vec<Vec<f64>>,
}

impl ClusterTable {
    /// `(55.16, 0.28, -0.03, 0.12)`.
    pub fn format_summary(row: &[f64]) -> String {
        let parts: Vec<String> = row.iter().map(|x| format!("{x:.2}")).collect();
        format!("({})", parts.join(", "))
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut t = Table::new(["cluster", "proportion", "tau", "xi"].into_iter().map(String::from).chain(self.features.iter().map(|f| format!("w_{f}"))));
        for (c, (p, row)) in self.proportions.iter().zip(&self.summaries).enumerate() {
            let mut r = vec![(c + 1).to_string(), fmt_num(*p)];
            r.extend(row.iter().map(|&x| fmt_num(x)));
            t.push(r);
        }
        t.write(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let f = CsvFile::read(path)?;
        if f.header.len() < 4 || f.header[..4] != ["cluster", "proportion", "tau", "xi"] {
            return Err(CliError::parse(path, "header must start with cluster,proportion,tau,xi"));
        }
        let features = f.header[4..].iter().map(|h| h.strip_prefix("w_").unwrap_or(h).to_string()).collect();
        let k = f.records.len();
        let mut table = ClusterTable { features, proportions: vec![0.0; k], summaries: vec![Vec::new(); k] };
        for r in 0..k {
            let c = f.cluster(r, 0, k)?;
            table.proportions[c] = f.number(r, 1)?;
            table.summaries[c] = (2..f.header.len()).map(|j| f.number(r, j)).collect::<CliResult<Vec<_>>>()?;
        }
        Ok(table)
    }
}

/// Writes the diagnostics trace, one row per recorded iteration.
pub fn write_trace(path: &Path, trace: &[TraceRow], features: &[String]) -> CliResult<()> {
    let k = trace.first().map_or(0, |r| r.proportions.len());
    let mut header: Vec<String> = ["iteration", "step_size", "complete_loglik", "data_loglik"].into_iter().map(String::from).collect();
    header.extend(Block::ALL.iter().map(|b| format!("accept_{}", b.name())));
    for name in ["pi", "tau_mean", "tau_sd", "xi_mean", "xi_sd"] {
        header.extend((1..=k).map(|c| format!("{name}_{c}")));
    }
    header.extend(features.iter().map(|f| format!("noise_sd_{f}")));
    let mut t = Table::new(header);
    for r in trace {
        let mut row = vec![r.iteration.to_string(), fmt_num(r.step_size), fmt_num(r.complete_loglik), fmt_num(r.data_loglik)];
        row.extend(r.acceptance.iter().map(|a| fmt_opt(*a)));
        for v in [&r.proportions, &r.tau_mean, &r.tau_sd, &r.xi_mean, &r.xi_sd, &r.noise_sd] {
            row.extend(v.iter().map(|&x| fmt_num(x)));
        }
        t.push(row);
    }
    t.write(path)
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema: String,
    version: u32,
    content: T,
}

/// Writes `content` inside a `{schema, version, content}` envelope.
pub fn write_json<T: Serialize>(path: &Path, schema: &str, content: &T) -> CliResult<()> {
    let doc = Envelope { schema: schema.to_string(), version: SCHEMA_VERSION, content };
    let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Input(format!("cannot serialize {schema}: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Reads a document written by [`write_json`], checking its schema tag.
pub fn read_json<T: DeserializeOwned>(path: &Path, schema: &str) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let doc: Envelope<T> = serde_json::from_slice(&bytes).map_err(|e| CliError::parse(path, e.to_string()))?;
    if doc.schema != schema {
        return Err(CliError::parse(path, format!("expected a {schema} document, found {}", doc.schema)));
    }
    if doc.version > SCHEMA_VERSION {
        return Err(CliError::parse(path, format!("document version {} is newer than supported version {SCHEMA_VERSION}", doc.version)));
    }
    Ok(doc.content)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 55.16, f64::MIN_POSITIVE, 0.0, -0.0] {
            assert_eq!(fmt_num(x).parse::<f64>().unwrap().to_bits(), x.to_bits(), "{x}");
        }
        assert_eq!(fmt_num(f64::NAN), "NaN");
        assert!(fmt_num(f64::NAN).parse::<f64>().unwrap().is_nan());
        assert_eq!(fmt_num(2.0), "2");
        assert_eq!(fmt_num(3.25e-12), "3.25e-12");
    }

    #[test]
    fn summary_format() {
        assert_eq!(ClusterTable::format_summary(&[55.1612, 0.2799, -0.031, 0.1249]), "(55.16, 0.28, -0.03, 0.12)");
    }
}
