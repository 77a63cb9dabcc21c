//! Two-stage behavioral adapter.
//!
//! Utility of alternative `k` is the frozen structural utility plus
//! `alpha * log q_k + g_k(q)`, where `q` is the foundation model's probability
//! vector for the observation and `g` is a one-hidden-layer tanh network fed
//! only with `q`. Because `q` is fixed per observation, the correction is an
//! observation-level intercept shift and cannot change how utilities respond
//! to time or cost.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::fm_probs::{safe_log, FmProbabilities};
use crate::mnl::{
    self, log_softmax_masked, softmax_masked, ConvergenceReport, MnlDocument, MnlModel, Prepared, Targets, UtilitySpec,
};
use crate::optim::{self, Objective, OptimConfig};

pub const DEFAULT_HIDDEN: usize = 16;
pub const ADAPTER_FORMAT_VERSION: u32 = 1;
const INIT_RANGE: f64 = 0.1;

/// `alpha` plus the weights of `g: R^K -> R^H (tanh) -> R^K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionParams {
    pub alpha: f64,
    pub n_alternatives: usize,
    pub hidden: usize,
    /// `H x K`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `K x H`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl CorrectionParams {
    pub fn zeros(n_alternatives: usize, hidden: usize) -> Self {
        Self {
            alpha: 0.0,
            n_alternatives,
            hidden,
            w1: vec![0.0; hidden * n_alternatives],
            b1: vec![0.0; hidden],
            w2: vec![0.0; n_alternatives * hidden],
            b2: vec![0.0; n_alternatives],
        }
    }

    /// Hidden weights uniform in `[-0.1, 0.1]`; output layer and `alpha` zero,
    /// so the correction starts out identically zero.
    pub fn initial(n_alternatives: usize, hidden: usize, seed: u64) -> Self {
        let mut c = Self::zeros(n_alternatives, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut c.w1 {
            *w = rng.random_range(-INIT_RANGE..=INIT_RANGE);
        }
        c
    }

    pub fn n_params(&self) -> usize {
        1 + self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn to_vector(&self) -> Vec<f64> {
        std::iter::once(self.alpha)
            .chain(self.w1.iter().copied())
            .chain(self.b1.iter().copied())
            .chain(self.w2.iter().copied())
            .chain(self.b2.iter().copied())
            .collect()
    }

    pub fn from_vector(n_alternatives: usize, hidden: usize, x: &[f64]) -> Self {
        let (k, h) = (n_alternatives, hidden);
        assert_eq!(x.len(), 1 + 2 * h * k + h + k, "correction vector has wrong length");
        let mut at = 1;
        let mut take = |n: usize| {
            let s = x[at..at + n].to_vec();
            at += n;
            s
        };
        let w1 = take(h * k);
        let b1 = take(h);
        let w2 = take(k * h);
        let b2 = take(k);
        Self {
            alpha: x[0],
            n_alternatives,
            hidden,
            w1,
            b1,
            w2,
            b2,
        }
    }

    fn hidden_activations(&self, q: &[f64]) -> Vec<f64> {
        let k = self.n_alternatives;
        (0..self.hidden)
            .map(|j| {
                let z: f64 = self.w1[j * k..(j + 1) * k].iter().zip(q).map(|(w, x)| w * x).sum();
                (z + self.b1[j]).tanh()
            })
            .collect()
    }

    /// The network output `g(q)`.
    pub fn network(&self, q: &[f64]) -> Vec<f64> {
        let h = self.hidden_activations(q);
        (0..self.n_alternatives)
            .map(|kk| {
                let s: f64 = self.w2[kk * self.hidden..(kk + 1) * self.hidden]
                    .iter()
                    .zip(&h)
                    .map(|(w, x)| w * x)
                    .sum();
                s + self.b2[kk]
            })
            .collect()
    }
}

/// `alpha * safe_log(q) + g(q)`.
pub fn correction_term(c: &CorrectionParams, q: &[f64]) -> Vec<f64> {
    safe_log(q)
        .into_iter()
        .zip(c.network(q))
        .map(|(s, g)| c.alpha * s + g)
        .collect()
}

/// Stage-2 optimizer settings plus the width of `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub optim: OptimConfig,
    pub hidden: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            optim: OptimConfig::stage2(),
            hidden: DEFAULT_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Report {
    pub alpha: f64,
    /// Mean validation log-likelihood of the untrained adapter (the Stage-1 model).
    pub initial_val_objective: Option<f64>,
    pub convergence: ConvergenceReport,
}

#[derive(Debug, Clone)]
pub struct AdapterModel {
    structural: MnlModel,
    structural_checksum: String,
    correction: CorrectionParams,
    fm_source: String,
    report: Stage2Report,
}

impl AdapterModel {
    pub fn structural(&self) -> &MnlModel {
        &self.structural
    }

    pub fn correction(&self) -> &CorrectionParams {
        &self.correction
    }

    pub fn fm_source(&self) -> &str {
        &self.fm_source
    }

    pub fn report(&self) -> &Stage2Report {
        &self.report
    }

    pub fn structural_checksum(&self) -> &str {
        &self.structural_checksum
    }

    /// Recomputes the structural checksum and compares it with the one
    /// recorded when Stage 1 finished.
    pub fn verify(&self) -> Result<()> {
        let found = self.structural.checksum();
        if found != self.structural_checksum {
            return Err(Error::Checksum {
                expected: self.structural_checksum.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn vot(&self, context: &str) -> Result<f64> {
        self.structural.vot(context)
    }

    /// Structural utility plus correction, before availability masking.
    pub fn adapter_utility(&self, obs: &Observation, q: &[f64]) -> Vec<f64> {
        self.structural
            .utilities(obs)
            .into_iter()
            .zip(correction_term(&self.correction, q))
            .map(|(v, c)| v + c)
            .collect()
    }

    pub fn predict(&self, obs: &Observation, q: &[f64]) -> Vec<f64> {
        softmax_masked(&self.adapter_utility(obs, q), &obs.avail)
    }

    pub fn log_probabilities(&self, obs: &Observation, q: &[f64]) -> Vec<f64> {
        log_softmax_masked(&self.adapter_utility(obs, q), &obs.avail)
    }

    pub fn to_document(&self) -> AdapterDocument {
        AdapterDocument {
            format_version: ADAPTER_FORMAT_VERSION,
            kind: "adapter".into(),
            structural: self.structural.to_document(),
            structural_checksum: self.structural_checksum.clone(),
            fm_source: self.fm_source.clone(),
            correction: self.correction.clone(),
            stage2: self.report.clone(),
        }
    }

    pub fn from_document(doc: AdapterDocument) -> Result<Self> {
        if doc.kind != "adapter" || doc.format_version != ADAPTER_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected adapter document version {ADAPTER_FORMAT_VERSION}, found `{}` version {}",
                doc.kind, doc.format_version
            )));
        }
        let c = &doc.correction;
        let (k, h) = (c.n_alternatives, c.hidden);
        if c.w1.len() != h * k || c.b1.len() != h || c.w2.len() != k * h || c.b2.len() != k {
            return Err(Error::Format(
                "correction weight shapes do not match the declared sizes".into(),
            ));
        }
        let structural = MnlModel::from_document(doc.structural)?;
        if k != structural.schema().alternatives.len() {
            return Err(Error::Format(
                "correction input size differs from the number of alternatives".into(),
            ));
        }
        let model = Self {
            structural,
            structural_checksum: doc.structural_checksum,
            correction: doc.correction,
            fm_source: doc.fm_source,
            report: doc.stage2,
        };
        model.verify()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterDocument {
    pub format_version: u32,
    pub kind: String,
    pub structural: MnlDocument,
    pub structural_checksum: String,
    pub fm_source: String,
    pub correction: CorrectionParams,
    pub stage2: Stage2Report,
}

/// Mean adapter log-likelihood over `(alpha, g)` with the structural
/// utilities held fixed.
pub(crate) struct CorrectionObjective {
    n: usize,
    k: usize,
    hidden: usize,
    structural: Vec<f64>,
    q: Vec<f64>,
    log_q: Vec<f64>,
    avail: Vec<bool>,
    targets: Vec<f64>,
}

impl CorrectionObjective {
    pub(crate) fn new(model: &MnlModel, ds: &Dataset, fm: &FmProbabilities, hidden: usize) -> Result<Self> {
        model.schema().ensure_matches(ds)?;
        let fm = fm.restricted_to(ds)?;
        let prepared = Prepared::new(model.design(), ds, Targets::Observed);
        let structural = prepared.utilities(&model.params().gamma());
        let q: Vec<f64> = fm.rows().iter().flatten().copied().collect();
        let log_q = safe_log(&q);
        Ok(Self {
            n: ds.len(),
            k: ds.n_alternatives(),
            hidden,
            structural,
            q,
            log_q,
            avail: prepared.avail,
            targets: prepared.targets,
        })
    }

    fn sum_objective(&self, x: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (k, h) = (self.k, self.hidden);
        let c = CorrectionParams::from_vector(k, h, x);
        let dim = if want_grad { x.len() } else { 0 };
        // offsets into the flat parameter vector
        let (o_w1, o_b1) = (1, 1 + h * k);
        let (o_w2, o_b2) = (o_b1 + h, o_b1 + h + k * h);
        optim::reduce_chunks(self.n, dim, |rows, grad| {
            let mut total = 0.0;
            let mut v = vec![0.0; k];
            let mut r = vec![0.0; k];
            for i in rows {
                let q = &self.q[i * k..(i + 1) * k];
                let s = &self.log_q[i * k..(i + 1) * k];
                let avail = &self.avail[i * k..(i + 1) * k];
                let t = &self.targets[i * k..(i + 1) * k];
                let hid = c.hidden_activations(q);
                for kk in 0..k {
                    let g: f64 = c.w2[kk * h..(kk + 1) * h].iter().zip(&hid).map(|(w, a)| w * a).sum();
                    v[kk] = self.structural[i * k + kk] + c.alpha * s[kk] + g + c.b2[kk];
                }
                let logp = log_softmax_masked(&v, avail);
                for kk in 0..k {
                    if avail[kk] && t[kk] != 0.0 {
                        total += t[kk] * logp[kk];
                    }
                }
                if !want_grad {
                    continue;
                }
                for kk in 0..k {
                    r[kk] = if avail[kk] { t[kk] - logp[kk].exp() } else { 0.0 };
                }
                for kk in 0..k {
                    grad[0] += r[kk] * s[kk];
                    grad[o_b2 + kk] += r[kk];
                    for j in 0..h {
                        grad[o_w2 + kk * h + j] += r[kk] * hid[j];
                    }
                }
                for j in 0..h {
                    let dh: f64 = (0..k).map(|kk| c.w2[kk * h + j] * r[kk]).sum();
                    let dz = dh * (1.0 - hid[j] * hid[j]);
                    grad[o_b1 + j] += dz;
                    for m in 0..k {
                        grad[o_w1 + j * k + m] += dz * q[m];
                    }
                }
            }
            total
        })
    }
}

impl Objective for CorrectionObjective {
    fn dim(&self) -> usize {
        1 + 2 * self.hidden * self.k + self.hidden + self.k
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.sum_objective(x, false).0 / self.n.max(1) as f64
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let n = self.n.max(1) as f64;
        let (f, g) = self.sum_objective(x, true);
        (f / n, g.into_iter().map(|v| v / n).collect())
    }
}

/// Summed adapter log-likelihood of `ds` for the given correction.
pub fn adapter_log_likelihood(
    frozen: &MnlModel,
    ds: &Dataset,
    fm: &FmProbabilities,
    c: &CorrectionParams,
) -> Result<f64> {
    let obj = CorrectionObjective::new(frozen, ds, fm, c.hidden)?;
    Ok(obj.sum_objective(&c.to_vector(), false).0)
}

/// Gradient of [`adapter_log_likelihood`], laid out like the parameters.
pub fn grad_adapter_log_likelihood(
    frozen: &MnlModel,
    ds: &Dataset,
    fm: &FmProbabilities,
    c: &CorrectionParams,
) -> Result<CorrectionParams> {
    let obj = CorrectionObjective::new(frozen, ds, fm, c.hidden)?;
    let g = obj.sum_objective(&c.to_vector(), true).1;
    Ok(CorrectionParams::from_vector(c.n_alternatives, c.hidden, &g))
}

/// Stage 2: freeze the structural model and fit only `(alpha, g)`.
///
/// `frozen_checksum` is the checksum recorded with the Stage-1 output; a
/// mismatch before or after fitting is a hard error.
pub fn fit_stage2(
    train: &Dataset,
    val: &Dataset,
    fm_train: &FmProbabilities,
    fm_val: &FmProbabilities,
    frozen: &MnlModel,
    frozen_checksum: &str,
    cfg: &Stage2Config,
) -> Result<AdapterModel> {
    let check = |m: &MnlModel| {
        let found = m.checksum();
        if found != frozen_checksum {
            return Err(Error::Checksum {
                expected: frozen_checksum.to_string(),
                found,
            });
        }
        Ok(())
    };
    check(frozen)?;
    if cfg.hidden == 0 {
        return Err(Error::Argument(
            "correction network needs at least one hidden unit".into(),
        ));
    }
    let k = train.n_alternatives();
    let train_obj = CorrectionObjective::new(frozen, train, fm_train, cfg.hidden)?;
    let val_obj = CorrectionObjective::new(frozen, val, fm_val, cfg.hidden)?;
    let x0 = CorrectionParams::initial(k, cfg.hidden, cfg.optim.seed).to_vector();
    let has_val = !val.is_empty();
    let initial_val = has_val.then(|| val_obj.value(&x0));
    let monitor: Option<&dyn Objective> = if has_val { Some(&val_obj) } else { None };
    let out = optim::maximize(&train_obj, monitor, x0, None, &cfg.optim)?;
    check(frozen)?;

    let correction = CorrectionParams::from_vector(k, cfg.hidden, &out.x);
    Ok(AdapterModel {
        structural: frozen.clone(),
        structural_checksum: frozen_checksum.to_string(),
        fm_source: fm_train.source_tag.clone(),
        report: Stage2Report {
            alpha: correction.alpha,
            initial_val_objective: initial_val,
            convergence: ConvergenceReport {
                iterations: out.iterations,
                best_iteration: out.best_iteration,
                stop: out.stop,
                grad_inf_norm: out.grad_inf_norm,
                train_objective: out.train_objective,
                val_objective: has_val.then_some(out.monitor_objective),
                non_identified: vec![],
            },
        },
        correction,
    })
}

/// Fits a structural model to the foundation model's soft labels by
/// minimizing cross-entropy; the labels are renormalized over each row's
/// available alternatives. Early stopping monitors validation cross-entropy.
pub fn distill_mnl(
    train: &Dataset,
    val: &Dataset,
    fm_train: &FmProbabilities,
    fm_val: &FmProbabilities,
    spec: &UtilitySpec,
    cfg: &OptimConfig,
) -> Result<MnlModel> {
    train.schema().ensure_matches(val)?;
    let design = spec.compile_for(train)?;
    let soft_train = fm_train.soft_labels(train)?;
    let soft_val = fm_val.soft_labels(val)?;
    let (params, report) = mnl::fit_prepared(
        spec,
        Prepared::new(&design, train, Targets::Soft(&soft_train)),
        Prepared::new(&design, val, Targets::Soft(&soft_val)),
        cfg,
    )?;
    MnlModel::new(spec.clone(), train.schema(), params, report)
}

/// Mean cross-entropy `-sum_k t_k log P_k` of a structural model against
/// soft labels.
pub fn cross_entropy(model: &MnlModel, ds: &Dataset, soft: &[Vec<f64>]) -> f64 {
    let total: f64 = ds
        .rows
        .iter()
        .zip(soft)
        .map(|(obs, t)| {
            model
                .log_probabilities(obs)
                .iter()
                .zip(t)
                .filter(|(_, &tk)| tk != 0.0)
                .map(|(lp, tk)| -tk * lp)
                .sum::<f64>()
        })
        .sum();
    total / ds.len().max(1) as f64
}
