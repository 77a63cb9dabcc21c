//! Query-only behavioral audit: perturbation monotonicity, finite-difference
//! value of time, availability leak and accuracy.
//!
//! Any model that maps an observation to a probability vector can be
//! audited. Models backed by a fixed probability table cannot answer
//! perturbed inputs, so their perturbation metrics are reported as omitted.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterModel;
use crate::data::{Dataset, Observation, COST_ATTRIBUTE, TIME_ATTRIBUTE};
use crate::error::{Error, Result};
use crate::fm_probs::FmProbabilities;
use crate::mnl::{MnlModel, MINUTES_PER_HOUR};

/// Probability vectors must sum to one within this tolerance.
pub const PROBABILITY_TOLERANCE: f64 = 1e-6;
/// Hard ceiling on the mean probability placed on unavailable alternatives
/// by a model that masks availability.
pub const LEAK_TOLERANCE: f64 = 1e-12;
/// Below this absolute cost response a finite-difference VOT is undefined.
pub const MIN_COST_SENSITIVITY: f64 = 1e-9;
/// Step used when an attribute is constant over the audited split.
pub const FALLBACK_DELTA: f64 = 0.01;
pub const SWISSMETRO_VOT_CEILING: f64 = 200.0;
pub const LPMC_VOT_CEILING: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Perturbable,
    FixedTable,
}

/// Alternatives over which a finite-difference VOT is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotScope {
    pub context: String,
    pub alternatives: Vec<String>,
}

pub trait ChoiceModel: Sync {
    fn label(&self) -> String;

    fn capability(&self) -> Capability;

    fn predict(&self, obs: &Observation) -> Result<Vec<f64>>;

    fn log_probabilities(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.predict(obs)?.into_iter().map(f64::ln).collect())
    }

    /// True when the attribute has no structural effect on `alt` for this
    /// observation, so a perturbation may legitimately leave it unchanged.
    fn is_excluded(&self, _obs: &Observation, _alt: usize, _attr: usize) -> bool {
        false
    }

    /// Contexts for the finite-difference VOT; `None` audits a single
    /// context over every alternative.
    fn vot_scopes(&self) -> Option<Vec<VotScope>> {
        None
    }

    fn analytic_vot(&self, _context: &str) -> Option<f64> {
        None
    }

    /// Whether the model claims monotonicity, zero leak and positive VOT by
    /// construction; such claims are checked as hard validity criteria.
    fn constructive(&self) -> bool {
        false
    }
}

fn mnl_scopes(model: &MnlModel) -> Vec<VotScope> {
    model
        .spec()
        .vot_contexts
        .iter()
        .map(|c| VotScope {
            context: c.name.clone(),
            alternatives: c.alternatives.clone(),
        })
        .collect()
}

impl ChoiceModel for MnlModel {
    fn label(&self) -> String {
        "MNL".into()
    }

    fn capability(&self) -> Capability {
        Capability::Perturbable
    }

    fn predict(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.probabilities(obs))
    }

    fn log_probabilities(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(MnlModel::log_probabilities(self, obs))
    }

    fn is_excluded(&self, obs: &Observation, alt: usize, attr: usize) -> bool {
        self.design().is_excluded(obs, alt, attr)
    }

    fn vot_scopes(&self) -> Option<Vec<VotScope>> {
        Some(mnl_scopes(self))
    }

    fn analytic_vot(&self, context: &str) -> Option<f64> {
        self.vot(context).ok()
    }

    fn constructive(&self) -> bool {
        true
    }
}

/// A structural model under a different row label, e.g. a distilled MNL.
pub struct Labeled<'a, M: ?Sized> {
    pub label: String,
    pub model: &'a M,
}

impl<M: ChoiceModel + ?Sized> ChoiceModel for Labeled<'_, M> {
    fn label(&self) -> String {
        self.label.clone()
    }
    fn capability(&self) -> Capability {
        self.model.capability()
    }
    fn predict(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.model.predict(obs)
    }
    fn log_probabilities(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.model.log_probabilities(obs)
    }
    fn is_excluded(&self, obs: &Observation, alt: usize, attr: usize) -> bool {
        self.model.is_excluded(obs, alt, attr)
    }
    fn vot_scopes(&self) -> Option<Vec<VotScope>> {
        self.model.vot_scopes()
    }
    fn analytic_vot(&self, context: &str) -> Option<f64> {
        self.model.analytic_vot(context)
    }
    fn constructive(&self) -> bool {
        self.model.constructive()
    }
}

fn lookup<'a>(fm: &'a FmProbabilities, obs: &Observation) -> Result<&'a [f64]> {
    fm.get(obs.id).ok_or_else(|| Error::Alignment {
        missing: vec![obs.id],
        extra: vec![],
    })
}

/// The adapter with its foundation-model probabilities looked up by id.
/// Perturbing an observation keeps its id, so `q` stays fixed.
pub struct AdapterPredictor<'a> {
    pub model: &'a AdapterModel,
    pub fm: &'a FmProbabilities,
}

impl ChoiceModel for AdapterPredictor<'_> {
    fn label(&self) -> String {
        format!("Adapt+{}", self.model.fm_source())
    }

    fn capability(&self) -> Capability {
        Capability::Perturbable
    }

    fn predict(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.model.predict(obs, lookup(self.fm, obs)?))
    }

    fn log_probabilities(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self.model.log_probabilities(obs, lookup(self.fm, obs)?))
    }

    fn is_excluded(&self, obs: &Observation, alt: usize, attr: usize) -> bool {
        self.model.structural().design().is_excluded(obs, alt, attr)
    }

    fn vot_scopes(&self) -> Option<Vec<VotScope>> {
        Some(mnl_scopes(self.model.structural()))
    }

    fn analytic_vot(&self, context: &str) -> Option<f64> {
        self.model.vot(context).ok()
    }

    fn constructive(&self) -> bool {
        true
    }
}

/// Replays a stored probability file. It cannot answer perturbed inputs.
pub struct FixedTable<'a> {
    pub probs: &'a FmProbabilities,
}

impl ChoiceModel for FixedTable<'_> {
    fn label(&self) -> String {
        self.probs.source_tag.clone()
    }

    fn capability(&self) -> Capability {
        Capability::FixedTable
    }

    fn predict(&self, obs: &Observation) -> Result<Vec<f64>> {
        Ok(lookup(self.probs, obs)?.to_vec())
    }
}

fn checked(f: &dyn ChoiceModel, obs: &Observation) -> Result<Vec<f64>> {
    let p = f.predict(obs)?;
    validate_probabilities(&p, obs)?;
    Ok(p)
}

fn validate_probabilities(p: &[f64], obs: &Observation) -> Result<()> {
    if p.len() != obs.avail.len() {
        return Err(Error::Domain(format!(
            "observation {}: model returned {} probabilities for {} alternatives",
            obs.id,
            p.len(),
            obs.avail.len()
        )));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain(format!(
            "observation {}: invalid probability vector {p:?}",
            obs.id
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(Error::Domain(format!(
            "observation {}: probabilities sum to {s}",
            obs.id
        )));
    }
    Ok(())
}

fn require_perturbable(f: &dyn ChoiceModel) -> Result<()> {
    match f.capability() {
        Capability::Perturbable => Ok(()),
        Capability::FixedTable => Err(Error::Capability(format!(
            "`{}` is a fixed probability table and cannot be queried at perturbed inputs",
            f.label()
        ))),
    }
}

/// Copy of `obs` with one attribute cell shifted by `delta`.
pub fn perturb(obs: &Observation, alt: usize, attr: usize, delta: f64) -> Observation {
    let mut out = obs.clone();
    let v = out.attr(alt, attr);
    out.set_attr(alt, attr, v + delta);
    out
}

/// `fraction` of each alternative's observed range of `attr` over `ds`;
/// constant attributes fall back to [`FALLBACK_DELTA`].
pub fn perturbation_deltas(ds: &Dataset, attr: usize, fraction: f64) -> Vec<f64> {
    (0..ds.n_alternatives())
        .map(|alt| match ds.attribute_range(alt, attr) {
            Some((lo, hi)) if hi > lo => fraction * (hi - lo),
            _ => FALLBACK_DELTA,
        })
        .collect()
}

fn attribute(ds: &Dataset, name: &str) -> Result<usize> {
    ds.alt_set
        .attribute_index(name)
        .ok_or_else(|| Error::Argument(format!("dataset has no attribute `{name}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub dataset: String,
    /// Attributes perturbed by the monotonicity test.
    pub attributes: Vec<String>,
    /// Monotonicity step as a fraction of each alternative's observed range.
    pub delta_fraction: f64,
    /// Finite-difference VOT steps, same rule.
    pub fd_fraction: f64,
    /// VOT above this (currency per hour) is flagged as implausible.
    pub vot_ceiling: Option<f64>,
}

impl AuditConfig {
    pub fn for_dataset(dataset: &str) -> Self {
        let ceiling = match dataset {
            "swissmetro" => Some(SWISSMETRO_VOT_CEILING),
            "lpmc" => Some(LPMC_VOT_CEILING),
            _ => None,
        };
        Self {
            dataset: dataset.to_string(),
            attributes: vec![COST_ATTRIBUTE.into(), TIME_ATTRIBUTE.into()],
            delta_fraction: 0.01,
            fd_fraction: 0.01,
            vot_ceiling: ceiling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityStats {
    /// Passing cells over evaluated cells.
    pub rate: f64,
    pub evaluated: usize,
    pub passed: usize,
    /// Cells where the attribute has no structural effect; they pass when the
    /// probability does not increase and are not part of `rate`.
    pub excluded: usize,
    pub excluded_increases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityResult {
    pub stats: Option<MonotonicityStats>,
    /// Per observation: whether every evaluated cell passed; `None` when the
    /// row had fewer than two available alternatives.
    pub row_flags: Vec<Option<bool>>,
}

#[derive(Default)]
struct RowMono {
    evaluated: usize,
    passed: usize,
    excluded: usize,
    excluded_increases: usize,
}

fn row_monotonicity(f: &dyn ChoiceModel, obs: &Observation, attr: usize, deltas: &[f64]) -> Result<Option<RowMono>> {
    if obs.n_available() < 2 {
        return Ok(None);
    }
    checked(f, obs)?;
    let base = f.log_probabilities(obs)?;
    let mut out = RowMono::default();
    for alt in (0..obs.avail.len()).filter(|&k| obs.avail[k]) {
        let moved = perturb(obs, alt, attr, deltas[alt]);
        checked(f, &moved)?;
        let after = f.log_probabilities(&moved)?[alt];
        if f.is_excluded(obs, alt, attr) {
            out.excluded += 1;
            if after > base[alt] {
                out.excluded_increases += 1;
            }
        } else {
            out.evaluated += 1;
            if after < base[alt] {
                out.passed += 1;
            }
        }
    }
    Ok(Some(out))
}

/// Raises `attr` of each available alternative in turn by the
/// 1%-of-range step and checks that its own log-probability strictly falls.
pub fn monotonicity_rate(f: &dyn ChoiceModel, ds: &Dataset, attr: &str, fraction: f64) -> Result<MonotonicityResult> {
    require_perturbable(f)?;
    let a = attribute(ds, attr)?;
    let deltas = perturbation_deltas(ds, a, fraction);
    let rows: Vec<Option<RowMono>> = ds
        .rows
        .par_iter()
        .map(|obs| row_monotonicity(f, obs, a, &deltas))
        .collect::<Result<_>>()?;
    let mut total = RowMono::default();
    let mut flags = Vec::with_capacity(rows.len());
    for r in &rows {
        match r {
            Some(r) => {
                total.evaluated += r.evaluated;
                total.passed += r.passed;
                total.excluded += r.excluded;
                total.excluded_increases += r.excluded_increases;
                flags.push(Some(r.passed == r.evaluated && r.excluded_increases == 0));
            }
            None => flags.push(None),
        }
    }
    let stats = (total.evaluated + total.excluded > 0).then(|| MonotonicityStats {
        rate: if total.evaluated > 0 {
            total.passed as f64 / total.evaluated as f64
        } else {
            1.0
        },
        evaluated: total.evaluated,
        passed: total.passed,
        excluded: total.excluded,
        excluded_increases: total.excluded_increases,
    });
    Ok(MonotonicityResult {
        stats,
        row_flags: flags,
    })
}

/// Forward-difference value of time for one alternative, in currency per
/// hour. `None` when the cost response is below [`MIN_COST_SENSITIVITY`].
pub fn fd_vot(
    f: &dyn ChoiceModel,
    obs: &Observation,
    alt: usize,
    time: usize,
    cost: usize,
    dt: f64,
    dc: f64,
) -> Result<Option<f64>> {
    require_perturbable(f)?;
    if !(dt > 0.0 && dc > 0.0) {
        return Err(Error::Argument(format!(
            "finite-difference steps must be positive, got dt={dt}, dc={dc}"
        )));
    }
    let p = checked(f, obs)?[alt];
    let pt = checked(f, &perturb(obs, alt, time, dt))?[alt];
    let pc = checked(f, &perturb(obs, alt, cost, dc))?[alt];
    let dp_dt = (pt - p) / dt;
    let dp_dc = (pc - p) / dc;
    if dp_dc.abs() < MIN_COST_SENSITIVITY {
        return Ok(None);
    }
    let vot = dp_dt / dp_dc * MINUTES_PER_HOUR;
    // keep a zero time response at +0 rather than -0
    Ok(Some(if vot == 0.0 { 0.0 } else { vot }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotStats {
    pub context: String,
    /// Model-reported VOT, when the model has one.
    pub analytic: Option<f64>,
    pub median: Option<f64>,
    pub fraction_negative: Option<f64>,
    pub fraction_above_ceiling: Option<f64>,
    pub n_cells: usize,
    pub n_undefined: usize,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Finite-difference VOT over every eligible cell of a context: available
/// alternatives in scope, rows with a real choice, and time and cost both
/// structurally present.
pub fn vot_statistics(f: &dyn ChoiceModel, ds: &Dataset, scope: &VotScope, cfg: &AuditConfig) -> Result<VotStats> {
    require_perturbable(f)?;
    let time = attribute(ds, TIME_ATTRIBUTE)?;
    let cost = attribute(ds, COST_ATTRIBUTE)?;
    let alts: Vec<usize> = scope
        .alternatives
        .iter()
        .map(|a| {
            ds.alt_set.alternative_index(a).ok_or_else(|| {
                Error::Argument(format!(
                    "VOT context `{}` names unknown alternative `{a}`",
                    scope.context
                ))
            })
        })
        .collect::<Result<_>>()?;
    let dts = perturbation_deltas(ds, time, cfg.fd_fraction);
    let dcs = perturbation_deltas(ds, cost, cfg.fd_fraction);
    let cells: Vec<Vec<Option<f64>>> = ds
        .rows
        .par_iter()
        .map(|obs| {
            if obs.n_available() < 2 {
                return Ok(vec![]);
            }
            alts.iter()
                .filter(|&&k| obs.avail[k] && !f.is_excluded(obs, k, time) && !f.is_excluded(obs, k, cost))
                .map(|&k| fd_vot(f, obs, k, time, cost, dts[k], dcs[k]))
                .collect()
        })
        .collect::<Result<_>>()?;
    let all: Vec<Option<f64>> = cells.into_iter().flatten().collect();
    let n_cells = all.len();
    let mut defined: Vec<f64> = all.into_iter().flatten().collect();
    let n_undefined = n_cells - defined.len();
    let frac = |pred: &dyn Fn(f64) -> bool| {
        (!defined.is_empty()).then(|| defined.iter().filter(|&&v| pred(v)).count() as f64 / defined.len() as f64)
    };
    let fraction_negative = frac(&|v| v < 0.0);
    let fraction_above_ceiling = match cfg.vot_ceiling {
        Some(c) => frac(&|v| v > c),
        None => None,
    };
    Ok(VotStats {
        context: scope.context.clone(),
        analytic: f.analytic_vot(&scope.context),
        median: median(&mut defined),
        fraction_negative,
        fraction_above_ceiling,
        n_cells,
        n_undefined,
    })
}

/// Mean predicted probability over unavailable cells; `None` when every
/// alternative is available everywhere.
pub fn availability_leak(f: &dyn ChoiceModel, ds: &Dataset) -> Result<Option<f64>> {
    let per_row: Vec<(f64, usize)> = ds
        .rows
        .par_iter()
        .map(|obs| {
            if obs.avail.iter().all(|&a| a) {
                return Ok((0.0, 0));
            }
            let p = checked(f, obs)?;
            let cells = obs.avail.iter().zip(&p).filter(|(a, _)| !**a);
            Ok(cells.fold((0.0, 0), |(s, n), (_, v)| (s + v, n + 1)))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = per_row.iter().fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
    Ok((n > 0).then(|| sum / n as f64))
}

/// Index of the most probable available alternative; ties go to the lowest
/// index.
pub fn predicted_choice(p: &[f64], avail: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for k in (0..p.len()).filter(|&k| avail[k]) {
        if best.is_none_or(|b| p[k] > p[b]) {
            best = Some(k);
        }
    }
    best
}

/// Share of rows whose predicted choice equals the observed one; `None` on
/// an empty dataset.
pub fn accuracy(f: &dyn ChoiceModel, ds: &Dataset) -> Result<Option<f64>> {
    if ds.is_empty() {
        return Ok(None);
    }
    let hits: Vec<bool> = ds
        .rows
        .par_iter()
        .map(|obs| Ok(predicted_choice(&checked(f, obs)?, &obs.avail) == Some(obs.choice)))
        .collect::<Result<_>>()?;
    Ok(Some(hits.iter().filter(|&&h| h).count() as f64 / ds.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Metric<T> {
    Value(T),
    /// Nothing to measure (e.g. no unavailable cells).
    NotApplicable,
    /// The model cannot be queried at perturbed inputs.
    Omitted,
}

impl<T> Metric<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            Metric::Value(v) => Some(v),
            _ => None,
        }
    }

    fn from_option(v: Option<T>) -> Self {
        v.map_or(Metric::NotApplicable, Metric::Value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub model: String,
    pub dataset: String,
    pub capability: Capability,
    pub constructive: bool,
    pub n_rows: usize,
    /// Rows with at least two available alternatives.
    pub n_evaluated: usize,
    /// Rows with a single available alternative (no perturbation possible).
    pub n_skipped: usize,
    pub accuracy: Metric<f64>,
    pub monotonicity: IndexMap<String, Metric<MonotonicityStats>>,
    pub vot: Metric<Vec<VotStats>>,
    pub availability_leak: Metric<f64>,
    pub config: AuditConfig,
}

impl AuditReport {
    /// Lowest monotonicity rate across the perturbed attributes.
    pub fn monotonicity_rate(&self) -> Metric<f64> {
        if self.monotonicity.values().any(|m| matches!(m, Metric::Omitted)) {
            return Metric::Omitted;
        }
        let rates: Vec<f64> = self
            .monotonicity
            .values()
            .filter_map(|m| m.value().map(|s| s.rate))
            .collect();
        if rates.is_empty() {
            return Metric::NotApplicable;
        }
        Metric::Value(rates.into_iter().fold(f64::INFINITY, f64::min))
    }

    /// Violations of the guarantees a constructive model claims. Always
    /// empty for models that make no such claim.
    pub fn validity_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.constructive {
            return out;
        }
        for (attr, m) in &self.monotonicity {
            if let Metric::Value(s) = m {
                if s.rate != 1.0 {
                    out.push(format!("{}: monotonicity in {attr} is {} (< 1)", self.model, s.rate));
                }
                if s.excluded_increases > 0 {
                    out.push(format!(
                        "{}: {} structurally excluded {attr} cells increased",
                        self.model, s.excluded_increases
                    ));
                }
            }
        }
        if let Metric::Value(leak) = self.availability_leak {
            if !(leak < LEAK_TOLERANCE) {
                out.push(format!(
                    "{}: availability leak {leak:e} is not below {LEAK_TOLERANCE:e}",
                    self.model
                ));
            }
        }
        if let Metric::Value(vots) = &self.vot {
            for v in vots {
                if let Some(a) = v.analytic {
                    if !(a > 0.0) {
                        out.push(format!("{}: VOT for `{}` is {a}, not positive", self.model, v.context));
                    }
                }
            }
        }
        out
    }
}

/// Runs every applicable metric. Perturbation metrics of fixed tables are
/// marked omitted; metrics with nothing to measure are not applicable.
pub fn full_audit(f: &dyn ChoiceModel, ds: &Dataset, cfg: &AuditConfig) -> Result<AuditReport> {
    let n_evaluated = ds.rows.iter().filter(|r| r.n_available() >= 2).count();
    let perturbable = f.capability() == Capability::Perturbable;
    let mut monotonicity = IndexMap::new();
    for attr in &cfg.attributes {
        let m = if !perturbable {
            Metric::Omitted
        } else {
            Metric::from_option(monotonicity_rate(f, ds, attr, cfg.delta_fraction)?.stats)
        };
        monotonicity.insert(attr.clone(), m);
    }
    let vot = if !perturbable {
        Metric::Omitted
    } else if n_evaluated == 0 {
        Metric::NotApplicable
    } else {
        let scopes = f.vot_scopes().unwrap_or_else(|| {
            vec![VotScope {
                context: "all".into(),
                alternatives: ds.alt_set.names().to_vec(),
            }]
        });
        Metric::Value(
            scopes
                .iter()
                .map(|s| vot_statistics(f, ds, s, cfg))
                .collect::<Result<Vec<_>>>()?,
        )
    };
    Ok(AuditReport {
        model: f.label(),
        dataset: cfg.dataset.clone(),
        capability: f.capability(),
        constructive: f.constructive(),
        n_rows: ds.len(),
        n_evaluated,
        n_skipped: ds.len() - n_evaluated,
        accuracy: Metric::from_option(accuracy(f, ds)?),
        monotonicity,
        vot,
        availability_leak: Metric::from_option(availability_leak(f, ds)?),
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy;

    struct Constant;

    impl ChoiceModel for Constant {
        fn label(&self) -> String {
            "uniform".into()
        }
        fn capability(&self) -> Capability {
            Capability::Perturbable
        }
        fn predict(&self, obs: &Observation) -> Result<Vec<f64>> {
            let k = obs.avail.len();
            Ok(vec![1.0 / k as f64; k])
        }
    }

    #[test]
    fn perturb_touches_one_cell() {
        let ds = toy(3);
        let o = &ds.rows[0];
        assert_eq!(&perturb(o, 1, 1, 0.0), o);
        let p = perturb(o, 0, 1, 1.0);
        assert_eq!(p.attr(0, 1), o.attr(0, 1) + 1.0);
        for k in 1..3 {
            for a in 0..2 {
                assert_eq!(p.attr(k, a).to_bits(), o.attr(k, a).to_bits());
            }
        }
    }

    #[test]
    fn deltas_follow_the_range_rule() {
        let mut ds = toy(4);
        for (i, r) in ds.rows.iter_mut().enumerate() {
            r.set_attr(0, 1, 10.0 + 100.0 * (i as f64) / 3.0);
        }
        let d = perturbation_deltas(&ds, 1, 0.01);
        assert!((d[0] - 1.0).abs() < 1e-12);
        // constant column falls back
        assert_eq!(d[1], FALLBACK_DELTA);
    }

    #[test]
    fn uniform_model_leaks_one_over_k_and_never_strictly_decreases() {
        let ds = toy(9);
        let leak = availability_leak(&Constant, &ds).unwrap().unwrap();
        assert_eq!(leak, 1.0 / 3.0);
        let m = monotonicity_rate(&Constant, &ds, "cost", 0.01).unwrap();
        assert_eq!(m.stats.unwrap().rate, 0.0);
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(predicted_choice(&[0.4, 0.4, 0.2], &[true, true, true]), Some(0));
        assert_eq!(predicted_choice(&[0.6, 0.3, 0.1], &[false, true, true]), Some(1));
        assert_eq!(predicted_choice(&[1.0], &[false]), None);
    }

    #[test]
    fn zero_time_response_gives_zero_vot() {
        struct CostOnly;
        impl ChoiceModel for CostOnly {
            fn label(&self) -> String {
                "cost-only".into()
            }
            fn capability(&self) -> Capability {
                Capability::Perturbable
            }
            fn predict(&self, obs: &Observation) -> Result<Vec<f64>> {
                let v: Vec<f64> = (0..obs.avail.len()).map(|k| -obs.attr(k, 1) / 10.0).collect();
                Ok(crate::mnl::softmax_masked(&v, &obs.avail))
            }
        }
        let ds = toy(2);
        let v = fd_vot(&CostOnly, &ds.rows[1], 0, 0, 1, 0.5, 0.5).unwrap().unwrap();
        assert_eq!(v.to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn fixed_table_refuses_perturbation() {
        let ds = toy(3);
        let fm = FmProbabilities::new(
            "uniform",
            "test",
            ds.alt_set.names().to_vec(),
            ds.rows.iter().map(|r| (r.id, vec![1.0 / 3.0; 3])).collect(),
        )
        .unwrap();
        let t = FixedTable { probs: &fm };
        assert!(matches!(
            monotonicity_rate(&t, &ds, "cost", 0.01),
            Err(Error::Capability(_))
        ));
        let rep = full_audit(&t, &ds, &AuditConfig::for_dataset("toy")).unwrap();
        assert_eq!(rep.vot, Metric::Omitted);
        assert_eq!(rep.monotonicity_rate(), Metric::Omitted);
        assert!(matches!(rep.accuracy, Metric::Value(_)));
    }

    #[test]
    fn empty_dataset_is_not_applicable_everywhere() {
        let ds = toy(0);
        let rep = full_audit(&Constant, &ds, &AuditConfig::for_dataset("toy")).unwrap();
        assert_eq!(rep.n_evaluated, 0);
        assert_eq!(rep.accuracy, Metric::NotApplicable);
        assert_eq!(rep.availability_leak, Metric::NotApplicable);
        assert_eq!(rep.vot, Metric::NotApplicable);
        assert_eq!(rep.monotonicity_rate(), Metric::NotApplicable);
    }
}
