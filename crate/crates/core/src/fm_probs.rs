//! Foundation-model probability files.
//!
//! ```text
//! # source=mitra split=test
//! id,p_train,p_sm,p_car
//! 17,0.21,0.70,0.09
//! ```
//!
//! The comment line is mandatory. Columns follow the dataset's alternative
//! order. Mass on unavailable alternatives is kept as-is.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result, RowError};

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-6;
/// Largest accepted deviation of a row sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;
/// Row sums closer to 1 than this are left untouched.
const RENORMALIZE_ABOVE: f64 = 1e-12;

/// `ln(max(q_k, 1e-6))` for every entry.
pub fn safe_log(q: &[f64]) -> Vec<f64> {
    q.iter().map(|&p| p.max(LOG_FLOOR).ln()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmProbabilities {
    pub source_tag: String,
    pub split: String,
    alternatives: Vec<String>,
    ids: Vec<u64>,
    rows: Vec<Vec<f64>>,
    index: HashMap<u64, usize>,
}

impl FmProbabilities {
    /// Builds from in-memory rows, validating each vector.
    pub fn new(
        source_tag: impl Into<String>,
        split: impl Into<String>,
        alternatives: Vec<String>,
        entries: Vec<(u64, Vec<f64>)>,
    ) -> Result<Self> {
        let k = alternatives.len();
        let mut ids = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        let mut errors = Vec::new();
        for (i, (id, q)) in entries.into_iter().enumerate() {
            match validate_row(&q, k) {
                Ok(q) => {
                    if index.insert(id, ids.len()).is_some() {
                        errors.push(RowError {
                            line: i + 1,
                            id: Some(id),
                            message: "duplicate id".into(),
                        });
                        continue;
                    }
                    ids.push(id);
                    rows.push(q);
                }
                Err(message) => errors.push(RowError {
                    line: i + 1,
                    id: Some(id),
                    message,
                }),
            }
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Ok(Self {
            source_tag: source_tag.into(),
            split: split.into(),
            alternatives,
            ids,
            rows,
            index,
        })
    }

    /// Parses and validates a probability file without aligning it.
    pub fn read(path: &Path, alternatives: &[String]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
        let (source, split) = parse_comment(first.trim()).ok_or_else(|| {
            Error::Format(format!(
                "{}: first line must be `# source=<tag> split=<name>`",
                path.display()
            ))
        })?;

        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = csv.headers()?.clone();
        let expected: Vec<String> = std::iter::once("id".to_string())
            .chain(alternatives.iter().map(|a| format!("p_{a}")))
            .collect();
        if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Schema(format!(
                "{}: header {:?} does not match {:?}",
                path.display(),
                headers.iter().collect::<Vec<_>>(),
                expected
            )));
        }
        let mut entries = Vec::new();
        for (i, rec) in csv.records().enumerate() {
            let rec = rec?;
            // comment line + header precede the first record
            let line = i + 3;
            let id = rec[0].parse::<u64>().map_err(|_| Error::Parse {
                line,
                column: "id".into(),
                value: rec[0].to_string(),
            })?;
            let q = (1..rec.len())
                .map(|c| {
                    rec[c].parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        column: expected[c].clone(),
                        value: rec[c].to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            entries.push((id, q));
        }
        Self::new(source, split, alternatives.to_vec(), entries).map_err(|e| match e {
            Error::Validation(mut rows) => {
                for r in &mut rows {
                    r.line += 2;
                }
                Error::Validation(rows)
            }
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# source={} split={}", self.source_tag, self.split).expect("write to vec");
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = std::iter::once("id".to_string())
            .chain(self.alternatives.iter().map(|a| format!("p_{a}")))
            .collect();
        w.write_record(&header)?;
        for (id, q) in self.ids.iter().zip(&self.rows) {
            let rec: Vec<String> = std::iter::once(id.to_string())
                .chain(q.iter().map(f64::to_string))
                .collect();
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn alternatives(&self) -> &[String] {
        &self.alternatives
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.index.get(&id).map(|&i| self.rows[i].as_slice())
    }

    /// Reorders to the dataset's row order, requiring an exact id cover.
    pub fn aligned_to(&self, ds: &Dataset) -> Result<Self> {
        self.check_alternatives(ds)?;
        let wanted: HashSet<u64> = ds.rows.iter().map(|r| r.id).collect();
        let mut missing: Vec<u64> = ds
            .rows
            .iter()
            .map(|r| r.id)
            .filter(|id| !self.index.contains_key(id))
            .collect();
        let mut extra: Vec<u64> = self.ids.iter().copied().filter(|id| !wanted.contains(id)).collect();
        if !missing.is_empty() || !extra.is_empty() {
            missing.sort_unstable();
            extra.sort_unstable();
            return Err(Error::Alignment { missing, extra });
        }
        self.restricted_to(ds)
    }

    /// Rows for the dataset's ids, in dataset order; extra ids are ignored.
    pub fn restricted_to(&self, ds: &Dataset) -> Result<Self> {
        self.check_alternatives(ds)?;
        let mut missing = Vec::new();
        let mut entries = Vec::with_capacity(ds.len());
        for r in &ds.rows {
            match self.get(r.id) {
                Some(q) => entries.push((r.id, q.to_vec())),
                None => missing.push(r.id),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Alignment { missing, extra: vec![] });
        }
        let ids: Vec<u64> = entries.iter().map(|(id, _)| *id).collect();
        Ok(Self {
            source_tag: self.source_tag.clone(),
            split: self.split.clone(),
            alternatives: self.alternatives.clone(),
            index: ids.iter().enumerate().map(|(i, &id)| (id, i)).collect(),
            ids,
            rows: entries.into_iter().map(|(_, q)| q).collect(),
        })
    }

    fn check_alternatives(&self, ds: &Dataset) -> Result<()> {
        if self.alternatives != ds.alt_set.names() {
            return Err(Error::Schema(format!(
                "probability columns {:?} do not match alternatives {:?}",
                self.alternatives,
                ds.alt_set.names()
            )));
        }
        Ok(())
    }

    /// Per-row soft labels renormalized over each row's available
    /// alternatives. Rows with no mass on any available alternative fall
    /// back to uniform over the available set.
    pub fn soft_labels(&self, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
        let aligned = self.restricted_to(ds)?;
        Ok(ds
            .rows
            .iter()
            .zip(&aligned.rows)
            .map(|(obs, q)| {
                let mass: f64 = q.iter().zip(&obs.avail).filter(|(_, &a)| a).map(|(p, _)| p).sum();
                let n_av = obs.n_available() as f64;
                q.iter()
                    .zip(&obs.avail)
                    .map(|(&p, &a)| match (a, mass > 0.0) {
                        (false, _) => 0.0,
                        (true, true) => p / mass,
                        (true, false) => 1.0 / n_av,
                    })
                    .collect()
            })
            .collect())
    }
}

fn parse_comment(line: &str) -> Option<(String, String)> {
    let body = line.strip_prefix('#')?.trim();
    let mut source = None;
    let mut split = None;
    for part in body.split_whitespace() {
        if let Some(v) = part.strip_prefix("source=") {
            source = Some(v.to_string());
        } else if let Some(v) = part.strip_prefix("split=") {
            split = Some(v.to_string());
        }
    }
    match (source, split) {
        (Some(s), Some(p)) if !s.is_empty() && !p.is_empty() => Some((s, p)),
        _ => None,
    }
}

fn validate_row(q: &[f64], k: usize) -> std::result::Result<Vec<f64>, String> {
    if q.len() != k {
        return Err(format!("expected {k} probabilities, got {}", q.len()));
    }
    if let Some(p) = q.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(format!("probabilities sum to {sum}"));
    }
    if (sum - 1.0).abs() > RENORMALIZE_ABOVE {
        Ok(q.iter().map(|p| p / sum).collect())
    } else {
        Ok(q.to_vec())
    }
}

/// Reads a probability file and aligns it to `expected`.
pub fn load_fm_probs(path: &Path, expected: &Dataset) -> Result<FmProbabilities> {
    FmProbabilities::read(path, expected.alt_set.names())?.aligned_to(expected)
}
