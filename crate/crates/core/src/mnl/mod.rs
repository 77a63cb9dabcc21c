//! Sign-constrained multinomial logit.
//!
//! Time and cost coefficients are `beta = -exp(theta)` with `theta`
//! unconstrained, so every fitted model has strictly negative time and cost
//! sensitivities. Unavailable alternatives get zero probability.

mod model;
mod spec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::optim::{self, Objective, OptimConfig, StopReason};

pub use model::{MnlDocument, MnlModel, MNL_FORMAT_VERSION};
pub use spec::{ConstrainedCoefficient, CostExclusion, Design, Interaction, UtilitySpec, VotContext};

/// Minutes to hours for value-of-time reporting.
pub const MINUTES_PER_HOUR: f64 = 60.0;

#[inline]
pub fn beta_from_theta(theta: f64) -> f64 {
    -theta.exp()
}

/// Raw structural parameters in specification order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralParams {
    pub theta: Vec<f64>,
    pub asc: Vec<f64>,
    pub w_inter: Vec<f64>,
}

impl StructuralParams {
    /// `theta = 0` (so `beta = -1`), zero constants and interactions.
    pub fn initial(spec: &UtilitySpec) -> Self {
        Self {
            theta: vec![0.0; spec.coefficients.len()],
            asc: vec![0.0; spec.asc.len()],
            w_inter: vec![0.0; spec.interactions.len()],
        }
    }

    pub fn from_vector(spec: &UtilitySpec, x: &[f64]) -> Self {
        let (nc, na) = (spec.coefficients.len(), spec.asc.len());
        assert_eq!(x.len(), spec.n_params(), "parameter vector has wrong length");
        Self {
            theta: x[..nc].to_vec(),
            asc: x[nc..nc + na].to_vec(),
            w_inter: x[nc + na..].to_vec(),
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        self.theta
            .iter()
            .chain(&self.asc)
            .chain(&self.w_inter)
            .copied()
            .collect()
    }

    pub fn beta(&self, coefficient: usize) -> f64 {
        beta_from_theta(self.theta[coefficient])
    }

    /// Linear utility weights `[beta..., asc..., w...]`.
    pub fn gamma(&self) -> Vec<f64> {
        self.theta
            .iter()
            .map(|&t| beta_from_theta(t))
            .chain(self.asc.iter().copied())
            .chain(self.w_inter.iter().copied())
            .collect()
    }

    /// SHA-256 over the bit patterns of every raw parameter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.theta, &self.asc, &self.w_inter] {
            h.update((part.len() as u64).to_le_bytes());
            for v in part {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Gradient blocks matching [`StructuralParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralGradient {
    pub theta: Vec<f64>,
    pub asc: Vec<f64>,
    pub w_inter: Vec<f64>,
}

/// `V_k = asc_k + sum beta * attr + interactions` for every alternative.
pub fn structural_utility(params: &StructuralParams, design: &Design, obs: &Observation) -> Vec<f64> {
    let gamma = params.gamma();
    let z = design.features(obs);
    z.chunks_exact(gamma.len().max(1))
        .take(design.n_alternatives())
        .map(|row| row.iter().zip(&gamma).map(|(a, b)| a * b).sum())
        .collect()
}

fn check_available(avail: &[bool]) -> Result<()> {
    if avail.iter().any(|&a| a) {
        Ok(())
    } else {
        Err(Error::Domain("no available alternative".into()))
    }
}

/// Log-probabilities over the available alternatives; unavailable entries are
/// `-inf`.
///
/// The normaliser is `max + log1p(sum of the other shifted exponentials)`,
/// which keeps `log P` of a near-certain alternative distinguishable from 0.
pub fn log_choice_probabilities(v: &[f64], avail: &[bool]) -> Result<Vec<f64>> {
    check_available(avail)?;
    Ok(log_softmax_masked(v, avail))
}

pub(crate) fn log_softmax_masked(v: &[f64], avail: &[bool]) -> Vec<f64> {
    let mut arg = usize::MAX;
    let mut max = f64::NEG_INFINITY;
    for (k, (&vk, &a)) in v.iter().zip(avail).enumerate() {
        if a && (arg == usize::MAX || vk > max) {
            max = vk;
            arg = k;
        }
    }
    let rest: f64 = v
        .iter()
        .zip(avail)
        .enumerate()
        .filter(|&(k, (_, &a))| a && k != arg)
        .map(|(_, (&vk, _))| (vk - max).exp())
        .sum();
    let lse = rest.ln_1p();
    v.iter()
        .zip(avail)
        .map(|(&vk, &a)| if a { (vk - max) - lse } else { f64::NEG_INFINITY })
        .collect()
}

/// Masked, max-shifted softmax. Unavailable entries are exactly zero.
pub fn choice_probabilities(v: &[f64], avail: &[bool]) -> Result<Vec<f64>> {
    check_available(avail)?;
    Ok(softmax_masked(v, avail))
}

pub(crate) fn softmax_masked(v: &[f64], avail: &[bool]) -> Vec<f64> {
    let max = v
        .iter()
        .zip(avail)
        .filter(|(_, &a)| a)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v
        .iter()
        .zip(avail)
        .map(|(&x, &a)| if a { (x - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Training targets: observed choices, or soft labels per row.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Observed,
    /// One probability vector per row, already restricted to available
    /// alternatives and summing to 1.
    Soft(&'a [Vec<f64>]),
}

/// Features, availability and targets laid out densely for repeated
/// likelihood evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub(crate) n: usize,
    pub(crate) k: usize,
    pub(crate) p: usize,
    n_coefficients: usize,
    z: Vec<f64>,
    pub(crate) avail: Vec<bool>,
    pub(crate) targets: Vec<f64>,
}

impl Prepared {
    pub(crate) fn new(design: &Design, ds: &Dataset, targets: Targets<'_>) -> Self {
        let (n, k, p) = (ds.len(), design.n_alternatives(), design.n_params());
        let mut z = Vec::with_capacity(n * k * p);
        let mut avail = Vec::with_capacity(n * k);
        let mut t = vec![0.0; n * k];
        for (i, row) in ds.rows.iter().enumerate() {
            z.extend(design.features(row));
            avail.extend_from_slice(&row.avail);
            match targets {
                Targets::Observed => t[i * k + row.choice] = 1.0,
                Targets::Soft(soft) => t[i * k..(i + 1) * k].copy_from_slice(&soft[i]),
            }
        }
        Self {
            n,
            k,
            p,
            n_coefficients: design.n_coefficients(),
            z,
            avail,
            targets: t,
        }
    }

    fn row_z(&self, i: usize) -> &[f64] {
        &self.z[i * self.k * self.p..(i + 1) * self.k * self.p]
    }

    pub(crate) fn row_avail(&self, i: usize) -> &[bool] {
        &self.avail[i * self.k..(i + 1) * self.k]
    }

    pub(crate) fn row_targets(&self, i: usize) -> &[f64] {
        &self.targets[i * self.k..(i + 1) * self.k]
    }

    /// Structural utilities for every row, row-major `n x K`.
    pub(crate) fn utilities(&self, gamma: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.k);
        for i in 0..self.n {
            for zk in self.row_z(i).chunks_exact(self.p.max(1)).take(self.k) {
                out.push(zk.iter().zip(gamma).map(|(a, b)| a * b).sum());
            }
        }
        out
    }

    /// Sum over rows of `sum_k t_k log P_k`, plus its gradient in `gamma`.
    fn sum_objective(&self, gamma: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (k, p) = (self.k, self.p);
        optim::reduce_chunks(self.n, if want_grad { p } else { 0 }, |rows, grad| {
            let mut v = vec![0.0; k];
            let mut total = 0.0;
            for i in rows {
                let z = self.row_z(i);
                for (kk, vk) in v.iter_mut().enumerate() {
                    *vk = z[kk * p..(kk + 1) * p].iter().zip(gamma).map(|(a, b)| a * b).sum();
                }
                let avail = self.row_avail(i);
                let t = self.row_targets(i);
                let logp = log_softmax_masked(&v, avail);
                let t_sum: f64 = t.iter().zip(avail).filter(|(_, &a)| a).map(|(x, _)| x).sum();
                for kk in 0..k {
                    if avail[kk] && t[kk] != 0.0 {
                        total += t[kk] * logp[kk];
                    }
                }
                if want_grad {
                    for kk in 0..k {
                        if !avail[kk] {
                            continue;
                        }
                        let r = t[kk] - logp[kk].exp() * t_sum;
                        if r != 0.0 {
                            for (g, zz) in grad.iter_mut().zip(&z[kk * p..(kk + 1) * p]) {
                                *g += r * zz;
                            }
                        }
                    }
                }
            }
            total
        })
    }

    /// Chain rule from `gamma` to the raw parameter vector.
    fn to_raw_gradient(&self, x: &[f64], mut g: Vec<f64>) -> Vec<f64> {
        for j in 0..self.n_coefficients {
            g[j] *= beta_from_theta(x[j]);
        }
        g
    }

    fn gamma_of(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| if j < self.n_coefficients { beta_from_theta(v) } else { v })
            .collect()
    }

    /// Parameters whose feature is constant across the available
    /// alternatives of every row: the likelihood does not depend on them.
    fn non_identified(&self) -> Vec<usize> {
        (0..self.p)
            .filter(|&j| {
                (0..self.n).all(|i| {
                    let z = self.row_z(i);
                    let avail = self.row_avail(i);
                    let mut vals = (0..self.k).filter(|&kk| avail[kk]).map(|kk| z[kk * self.p + j]);
                    let first = vals.next();
                    vals.all(|v| Some(v) == first)
                })
            })
            .collect()
    }
}

/// Mean soft-target log-likelihood as a function of the raw parameter vector.
pub(crate) struct MnlObjective {
    prepared: Prepared,
}

impl MnlObjective {
    pub(crate) fn new(prepared: Prepared) -> Self {
        Self { prepared }
    }
}

impl Objective for MnlObjective {
    fn dim(&self) -> usize {
        self.prepared.p
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.prepared.n.max(1) as f64;
        self.prepared.sum_objective(&self.prepared.gamma_of(x), false).0 / n
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let n = self.prepared.n.max(1) as f64;
        let (f, g) = self.prepared.sum_objective(&self.prepared.gamma_of(x), true);
        let g = self.prepared.to_raw_gradient(x, g);
        (f / n, g.into_iter().map(|v| v / n).collect())
    }
}

/// `sum_i log P_{choice_i}` under the given parameters.
pub fn log_likelihood(params: &StructuralParams, spec: &UtilitySpec, ds: &Dataset) -> Result<f64> {
    let prepared = Prepared::new(&spec.compile_for(ds)?, ds, Targets::Observed);
    Ok(prepared.sum_objective(&params.gamma(), false).0)
}

/// Analytic gradient of [`log_likelihood`] in `(theta, asc, w_inter)`.
pub fn grad_log_likelihood(params: &StructuralParams, spec: &UtilitySpec, ds: &Dataset) -> Result<StructuralGradient> {
    let prepared = Prepared::new(&spec.compile_for(ds)?, ds, Targets::Observed);
    let x = params.to_vector();
    let (_, g) = prepared.sum_objective(&params.gamma(), true);
    let g = StructuralParams::from_vector(spec, &prepared.to_raw_gradient(&x, g));
    Ok(StructuralGradient {
        theta: g.theta,
        asc: g.asc,
        w_inter: g.w_inter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub best_iteration: usize,
    pub stop: StopReason,
    pub grad_inf_norm: f64,
    /// Mean per-row objective on the training rows at the returned point.
    pub train_objective: f64,
    /// Mean per-row objective on the validation rows at the returned point.
    pub val_objective: Option<f64>,
    /// Parameters the data cannot identify; they stay at their initial value.
    pub non_identified: Vec<String>,
}

fn param_names(spec: &UtilitySpec) -> Vec<String> {
    spec.coefficients
        .iter()
        .map(|c| format!("theta_{}", c.name))
        .chain(spec.asc.iter().map(|a| format!("asc_{a}")))
        .chain(spec.interactions.iter().map(|i| format!("w_{}", i.name)))
        .collect()
}

pub(crate) fn fit_prepared(
    spec: &UtilitySpec,
    train: Prepared,
    val: Prepared,
    cfg: &OptimConfig,
) -> Result<(StructuralParams, ConvergenceReport)> {
    let names = param_names(spec);
    let non_identified: Vec<usize> = train.non_identified();
    let mut frozen = vec![false; spec.n_params()];
    for &j in &non_identified {
        frozen[j] = true;
    }
    let x0 = optim::jittered(&StructuralParams::initial(spec).to_vector(), cfg);
    let train = MnlObjective::new(train);
    let val = MnlObjective::new(val);
    let monitor: Option<&dyn Objective> = if val.prepared.n > 0 { Some(&val) } else { None };
    let out = optim::maximize(&train, monitor, x0, Some(&frozen), cfg)?;
    let report = ConvergenceReport {
        iterations: out.iterations,
        best_iteration: out.best_iteration,
        stop: out.stop,
        grad_inf_norm: out.grad_inf_norm,
        train_objective: out.train_objective,
        val_objective: monitor.map(|_| out.monitor_objective),
        non_identified: non_identified.iter().map(|&j| names[j].clone()).collect(),
    };
    Ok((StructuralParams::from_vector(spec, &out.x), report))
}

/// Stage 1: maximum likelihood over the structural parameters alone, with
/// early stopping on the validation log-likelihood.
pub fn fit_stage1(train: &Dataset, val: &Dataset, spec: &UtilitySpec, cfg: &OptimConfig) -> Result<MnlModel> {
    let design = spec.compile_for(train)?;
    train.schema().ensure_matches(val)?;
    let (params, report) = fit_prepared(
        spec,
        Prepared::new(&design, train, Targets::Observed),
        Prepared::new(&design, val, Targets::Observed),
        cfg,
    )?;
    MnlModel::new(spec.clone(), train.schema(), params, report)
}

/// `(beta_time / beta_cost) * 60`, in currency per hour.
pub fn vot_analytic(params: &StructuralParams, spec: &UtilitySpec, context: &str) -> Result<f64> {
    let ctx = spec
        .vot_context(context)
        .ok_or_else(|| Error::Argument(format!("no VOT context `{context}` in the specification")))?;
    let idx = |name: &str| {
        spec.coefficient_index(name)
            .ok_or_else(|| Error::Argument(format!("coefficient `{name}` absent for VOT context `{context}`")))
    };
    let (t, c) = (idx(&ctx.time)?, idx(&ctx.cost)?);
    Ok(params.beta(t) / params.beta(c) * MINUTES_PER_HOUR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AlternativeSet, Observation};

    fn two_alt_dataset(rows: Vec<Observation>) -> Dataset {
        let alts = AlternativeSet::new(vec!["a".into(), "b".into()], vec!["time".into(), "cost".into()]).unwrap();
        Dataset::new(alts, vec!["x".into()], rows, vec![]).unwrap()
    }

    #[test]
    fn beta_is_negative_across_theta_range() {
        for theta in [-10.0, 0.0, 10.0] {
            assert!(beta_from_theta(theta) < 0.0);
        }
        assert_eq!(beta_from_theta(0.0), -1.0);
    }

    #[test]
    fn utility_at_theta_zero() {
        let ds = two_alt_dataset(vec![Observation {
            id: 1,
            attrs: vec![10.0, 5.0, 1.0, 1.0],
            socio: vec![0.0],
            avail: vec![true, true],
            choice: 0,
        }]);
        let spec = UtilitySpec::generic(ds.alt_set.names(), vec![]);
        let design = spec.compile_for(&ds).unwrap();
        let v = structural_utility(&StructuralParams::initial(&spec), &design, &ds.rows[0]);
        assert_eq!(v[0], -15.0);
        assert_eq!(v[1], -2.0);
    }

    #[test]
    fn softmax_examples() {
        let p = choice_probabilities(&[0.0, 0.0, 0.0], &[true; 3]).unwrap();
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = choice_probabilities(&[0.0, 0.0, 0.0], &[true, true, false]).unwrap();
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
        let p = choice_probabilities(&[1000.0, 0.0], &[true, true]).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_eq!(p[0], 1.0);
        assert!(matches!(
            choice_probabilities(&[1.0, 2.0], &[false, false]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn log_probabilities_keep_resolution_near_certainty() {
        let lp = log_choice_probabilities(&[50.0, 0.0], &[true, true]).unwrap();
        assert!(lp[0] < 0.0 && lp[0] > -1e-20);
        assert!((lp[1] + 50.0).abs() < 1e-12);
        let lp = log_choice_probabilities(&[1.0, 2.0], &[true, false]).unwrap();
        assert_eq!(lp, vec![0.0, f64::NEG_INFINITY]);
    }

    #[test]
    fn equal_utilities_give_log_half() {
        let ds = two_alt_dataset(vec![Observation {
            id: 1,
            attrs: vec![1.0, 1.0, 1.0, 1.0],
            socio: vec![0.0],
            avail: vec![true, true],
            choice: 1,
        }]);
        let mut spec = UtilitySpec::generic(ds.alt_set.names(), vec![]);
        spec.asc.clear();
        let ll = log_likelihood(&StructuralParams::initial(&spec), &spec, &ds).unwrap();
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn vot_is_sixty_for_equal_thetas_and_errors_on_unknown_context() {
        let spec = UtilitySpec::swissmetro();
        let mut p = StructuralParams::initial(&spec);
        p.theta = vec![-3.7, -3.7];
        assert_eq!(vot_analytic(&p, &spec, "generic").unwrap(), 60.0);
        assert!(matches!(vot_analytic(&p, &spec, "pt"), Err(Error::Argument(_))));
    }

    #[test]
    fn constant_attribute_is_not_identified_and_stays_put() {
        // cost equal across alternatives in every row: its theta never moves.
        let rows = (0..40)
            .map(|i| Observation {
                id: i,
                attrs: vec![(i % 7) as f64, 3.0, ((i * 3) % 5) as f64, 3.0],
                socio: vec![0.0],
                avail: vec![true, true],
                choice: (i % 3 == 0) as usize,
            })
            .collect();
        let ds = two_alt_dataset(rows);
        let spec = UtilitySpec::generic(ds.alt_set.names(), vec![]);
        let g = grad_log_likelihood(&StructuralParams::initial(&spec), &spec, &ds).unwrap();
        assert!(g.theta[1].abs() < 1e-12);
        let model = fit_stage1(&ds, &ds, &spec, &OptimConfig::stage1()).unwrap();
        assert_eq!(model.params().theta[1], 0.0);
        assert_eq!(model.report().non_identified, vec!["theta_cost".to_string()]);
    }
}
