//! Choice datasets: domain types, validation, preprocessing, splitting and
//! subsampling.
//!
//! Attribute units are stored as ingested (time in minutes, cost in local
//! currency). Any conversion for reporting happens downstream.

mod io;
mod layout;

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, RowError};

pub use io::{read_generic, write_generic, GenericSchema};
pub use layout::{load_dataset, load_with_layout, Layout, LayoutConfig, LoadSummary};

/// Socio covariate holding the Swissmetro annual-pass (GA) indicator.
pub const GA_COVARIATE: &str = "ga";
/// Alternatives whose marginal cost is covered by the GA pass.
pub const GA_COVERED_ALTERNATIVES: [&str; 2] = ["train", "sm"];
pub const COST_ATTRIBUTE: &str = "cost";
pub const TIME_ATTRIBUTE: &str = "time";

/// Ordered alternative labels and per-alternative attribute labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlternativeSet {
    names: Vec<String>,
    attribute_names: Vec<String>,
}

impl AlternativeSet {
    pub fn new(names: Vec<String>, attribute_names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Schema(format!(
                "need at least 2 alternatives, got {}",
                names.len()
            )));
        }
        if let Some(dup) = first_duplicate(&names) {
            return Err(Error::Schema(format!("duplicate alternative `{dup}`")));
        }
        if let Some(dup) = first_duplicate(&attribute_names) {
            return Err(Error::Schema(format!("duplicate attribute `{dup}`")));
        }
        Ok(Self { names, attribute_names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    /// Number of alternatives.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn alternative_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }
}

fn first_duplicate(items: &[String]) -> Option<&str> {
    let mut seen = HashSet::new();
    items
        .iter()
        .find(|item| !seen.insert(item.as_str()))
        .map(String::as_str)
}

/// One choice situation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub id: u64,
    /// Row-major `K x A` attribute matrix.
    pub attrs: Vec<f64>,
    pub socio: Vec<f64>,
    pub avail: Vec<bool>,
    pub choice: usize,
}

impl Observation {
    #[inline]
    pub fn attr(&self, alt: usize, attr: usize) -> f64 {
        self.attrs[alt * self.n_attributes() + attr]
    }

    #[inline]
    pub fn n_alternatives(&self) -> usize {
        self.avail.len()
    }

    #[inline]
    pub fn n_attributes(&self) -> usize {
        self.attrs.len() / self.avail.len()
    }

    pub fn set_attr(&mut self, alt: usize, attr: usize, value: f64) {
        let a = self.n_attributes();
        self.attrs[alt * a + attr] = value;
    }

    pub fn n_available(&self) -> usize {
        self.avail.iter().filter(|&&a| a).count()
    }

    /// Checks the per-row invariants against the expected shape.
    pub fn validate(&self, k: usize, a: usize, n_socio: usize) -> std::result::Result<(), String> {
        if self.avail.len() != k {
            return Err(format!("expected {k} availability flags, got {}", self.avail.len()));
        }
        if self.attrs.len() != k * a {
            return Err(format!("expected {} attribute cells, got {}", k * a, self.attrs.len()));
        }
        if self.socio.len() != n_socio {
            return Err(format!("expected {n_socio} socio values, got {}", self.socio.len()));
        }
        if self.choice >= k {
            return Err(format!("choice index {} out of range [0, {k})", self.choice));
        }
        if !self.avail.iter().any(|&a| a) {
            return Err("no available alternative".into());
        }
        if !self.avail[self.choice] {
            return Err(format!("chosen alternative {} is unavailable", self.choice));
        }
        if let Some(v) = self.attrs.iter().chain(&self.socio).find(|v| !v.is_finite()) {
            return Err(format!("non-finite value {v}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub alt_set: AlternativeSet,
    pub socio_names: Vec<String>,
    pub rows: Vec<Observation>,
    /// Free-text trail of where the rows came from and what was applied.
    pub provenance: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, rejecting every row that breaks an invariant.
    pub fn new(
        alt_set: AlternativeSet,
        socio_names: Vec<String>,
        rows: Vec<Observation>,
        provenance: Vec<String>,
    ) -> Result<Self> {
        if let Some(dup) = first_duplicate(&socio_names) {
            return Err(Error::Schema(format!("duplicate socio covariate `{dup}`")));
        }
        let (k, a, s) = (alt_set.len(), alt_set.n_attributes(), socio_names.len());
        let mut errors = Vec::new();
        let mut ids = HashSet::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if let Err(message) = row.validate(k, a, s) {
                errors.push(RowError {
                    line: i + 1,
                    id: Some(row.id),
                    message,
                });
            }
            if !ids.insert(row.id) {
                errors.push(RowError {
                    line: i + 1,
                    id: Some(row.id),
                    message: "duplicate id".into(),
                });
            }
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }
        Ok(Self {
            alt_set,
            socio_names,
            rows,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_alternatives(&self) -> usize {
        self.alt_set.len()
    }

    pub fn socio_index(&self, name: &str) -> Option<usize> {
        self.socio_names.iter().position(|n| n == name)
    }

    pub fn schema(&self) -> Schema {
        Schema {
            alternatives: self.alt_set.names().to_vec(),
            attributes: self.alt_set.attribute_names().to_vec(),
            socio: self.socio_names.clone(),
        }
    }

    pub fn ids(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.id).collect()
    }

    /// Same schema, different rows (already validated by the caller).
    fn with_rows(&self, rows: Vec<Observation>, note: String) -> Dataset {
        let mut provenance = self.provenance.clone();
        provenance.push(note);
        Dataset {
            alt_set: self.alt_set.clone(),
            socio_names: self.socio_names.clone(),
            rows,
            provenance,
        }
    }

    /// Per-alternative `(min, max)` of one attribute over all rows.
    pub fn attribute_range(&self, alt: usize, attr: usize) -> Option<(f64, f64)> {
        self.rows
            .iter()
            .map(|r| r.attr(alt, attr))
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// SHA-256 over the numeric content (schema, ids, attrs, socio, avail, choice).
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for name in self
            .alt_set
            .names()
            .iter()
            .chain(self.alt_set.attribute_names())
            .chain(&self.socio_names)
        {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for r in &self.rows {
            h.update(r.id.to_le_bytes());
            for v in r.attrs.iter().chain(&r.socio) {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(r.avail.iter().map(|&a| a as u8).collect::<Vec<_>>());
            h.update((r.choice as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Names that fix the meaning of every column of an observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub alternatives: Vec<String>,
    pub attributes: Vec<String>,
    pub socio: Vec<String>,
}

impl Schema {
    pub fn alt_set(&self) -> Result<AlternativeSet> {
        AlternativeSet::new(self.alternatives.clone(), self.attributes.clone())
    }

    /// Errors unless `ds` has exactly this schema.
    pub fn ensure_matches(&self, ds: &Dataset) -> Result<()> {
        let other = ds.schema();
        if *self != other {
            return Err(Error::Schema(format!(
                "dataset schema {other:?} differs from the model schema {self:?}"
            )));
        }
        Ok(())
    }
}

/// Train/validation/test fractions plus the shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        let cfg = Self { ratios, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Argument(format!(
                "split ratios must lie in [0, 1]: {:?}",
                self.ratios
            )));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.70, 0.15, 0.15],
            seed: 0,
        }
    }
}

/// The three disjoint parts of a split.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn floor_count(n: usize, ratio: f64) -> usize {
    // 1e-9 keeps exact products such as 10_000 * 0.15 from flooring one short.
    ((n as f64) * ratio + 1e-9).floor() as usize
}

/// Shuffles with `cfg.seed`; validation and test sizes are floored, the
/// remainder goes to train. Each part is returned sorted by id.
pub fn split(ds: &Dataset, cfg: &SplitConfig) -> Result<Splits> {
    cfg.validate()?;
    let n = ds.len();
    let n_val = floor_count(n, cfg.ratios[1]);
    let n_test = floor_count(n, cfg.ratios[2]);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let take = |idx: &[usize]| {
        let mut rows: Vec<Observation> = idx.iter().map(|&i| ds.rows[i].clone()).collect();
        rows.sort_by_key(|r| r.id);
        rows
    };
    let tag = |part: &str, len: usize| format!("split part={part} n={len} ratios={:?} seed={}", cfg.ratios, cfg.seed);
    Ok(Splits {
        train: ds.with_rows(take(&order[..n_train]), tag("train", n_train)),
        val: ds.with_rows(take(&order[n_train..n_train + n_val]), tag("val", n_val)),
        test: ds.with_rows(take(&order[n_train + n_val..]), tag("test", n_test)),
    })
}

/// Uniform sample of `n` rows without replacement, sorted by id.
pub fn subsample(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > ds.len() {
        return Err(Error::Argument(format!(
            "cannot subsample {n} rows from a dataset of {}",
            ds.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Observation> = index::sample(&mut rng, ds.len(), n)
        .into_iter()
        .map(|i| ds.rows[i].clone())
        .collect();
    rows.sort_by_key(|r| r.id);
    Ok(ds.with_rows(rows, format!("subsample n={n} seed={seed}")))
}

const GA_TAG: &str = "preprocess: cost zeroed for GA holders on train, sm";

/// Sets the train and Swissmetro cost to 0 for GA pass holders. Idempotent.
pub fn preprocess_swissmetro(ds: &Dataset) -> Result<Dataset> {
    let ga = ds
        .socio_index(GA_COVARIATE)
        .ok_or_else(|| Error::Schema(format!("socio covariate `{GA_COVARIATE}` is missing")))?;
    let cost = ds
        .alt_set
        .attribute_index(COST_ATTRIBUTE)
        .ok_or_else(|| Error::Schema(format!("attribute `{COST_ATTRIBUTE}` is missing")))?;
    let covered = GA_COVERED_ALTERNATIVES
        .iter()
        .map(|name| {
            ds.alt_set
                .alternative_index(name)
                .ok_or_else(|| Error::Schema(format!("alternative `{name}` is missing")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = ds.clone();
    for row in &mut out.rows {
        if row.socio[ga] != 0.0 {
            for &alt in &covered {
                row.set_attr(alt, cost, 0.0);
            }
        }
    }
    if !out.provenance.iter().any(|p| p == GA_TAG) {
        out.provenance.push(GA_TAG.to_string());
    }
    Ok(out)
}
