//! Ground-truth data for recovery and adapter tests.
//!
//! Choices are drawn from a known generic-coefficient logit, and stand-in
//! foundation-model probabilities mix a uniform vector with a smoothed
//! one-hot on the observed choice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::predicted_choice;
use crate::data::{AlternativeSet, Dataset, Observation, COST_ATTRIBUTE, TIME_ATTRIBUTE};
use crate::error::{Error, Result};
use crate::fm_probs::FmProbabilities;
use crate::mnl::{softmax_masked, structural_utility, StructuralParams, UtilitySpec};

/// Label smoothing applied to the one-hot part of synthetic FM rows.
pub const FM_SMOOTHING: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub alternatives: Vec<String>,
    pub beta_time: f64,
    pub beta_cost: f64,
    /// Constants for every alternative but the last.
    pub asc: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub time_range: (f64, f64),
    pub cost_range: (f64, f64),
    /// Probability that each alternative is offered; rows left with nothing
    /// available are redrawn.
    pub availability_rate: f64,
    /// Choose the highest-utility alternative instead of sampling.
    pub noise_free: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            alternatives: vec!["alt0".into(), "alt1".into(), "alt2".into()],
            beta_time: -2.0,
            beta_cost: -1.0,
            asc: vec![0.5, -0.25],
            n: 10_000,
            seed: 0,
            time_range: (0.0, 2.0),
            cost_range: (0.0, 4.0),
            availability_rate: 0.9,
            noise_free: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.alternatives.len();
        if k < 2 {
            return Err(Error::Config("generator needs at least two alternatives".into()));
        }
        if self.asc.len() != k - 1 {
            return Err(Error::Config(format!(
                "expected {} constants, found {}",
                k - 1,
                self.asc.len()
            )));
        }
        if !(self.beta_time < 0.0 && self.beta_cost < 0.0) {
            return Err(Error::Config("true time and cost coefficients must be negative".into()));
        }
        for (name, (lo, hi)) in [("time_range", self.time_range), ("cost_range", self.cost_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!("{name} must satisfy min < max")));
            }
        }
        if !(self.availability_rate > 0.0 && self.availability_rate <= 1.0) {
            return Err(Error::Config("availability_rate must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// The specification the data are generated from.
    pub fn spec(&self) -> UtilitySpec {
        UtilitySpec::generic(&self.alternatives, vec![])
    }

    pub fn true_params(&self) -> StructuralParams {
        StructuralParams {
            theta: vec![(-self.beta_time).ln(), (-self.beta_cost).ln()],
            asc: self.asc.clone(),
            w_inter: vec![],
        }
    }

    /// `beta_time / beta_cost * 60`.
    pub fn true_vot(&self) -> f64 {
        self.beta_time / self.beta_cost * crate::mnl::MINUTES_PER_HOUR
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    /// True choice probabilities per row.
    pub true_probs: Vec<Vec<f64>>,
}

/// Draws one dataset. Row `i` uses its own random stream derived from
/// `(seed, i)`, so rows are independent of generation order.
pub fn generate(cfg: &GeneratorConfig) -> Result<Generated> {
    cfg.validate()?;
    let k = cfg.alternatives.len();
    let alt_set = AlternativeSet::new(
        cfg.alternatives.clone(),
        vec![TIME_ATTRIBUTE.into(), COST_ATTRIBUTE.into()],
    )?;
    let spec = cfg.spec();
    let design = spec.compile(&alt_set, &[])?;
    let params = cfg.true_params();

    let rows: Vec<(Observation, Vec<f64>)> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut attrs = Vec::with_capacity(2 * k);
            for _ in 0..k {
                attrs.push(rng.random_range(cfg.time_range.0..cfg.time_range.1));
                attrs.push(rng.random_range(cfg.cost_range.0..cfg.cost_range.1));
            }
            let avail = loop {
                let a: Vec<bool> = (0..k).map(|_| rng.random_bool(cfg.availability_rate)).collect();
                if a.iter().any(|&x| x) {
                    break a;
                }
            };
            let mut obs = Observation {
                id: i as u64 + 1,
                attrs,
                socio: vec![],
                avail,
                choice: 0,
            };
            let v = structural_utility(&params, &design, &obs);
            let p = softmax_masked(&v, &obs.avail);
            obs.choice = if cfg.noise_free {
                predicted_choice(&v, &obs.avail).expect("row has an available alternative")
            } else {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let last = (0..k)
                    .rev()
                    .find(|&j| obs.avail[j])
                    .expect("row has an available alternative");
                (0..k)
                    .filter(|&j| obs.avail[j])
                    .find(|&j| {
                        acc += p[j];
                        u < acc
                    })
                    .unwrap_or(last)
            };
            (obs, p)
        })
        .collect();
    let (obs, true_probs): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let dataset = Dataset::new(alt_set, vec![], obs, vec![format!("synthetic(seed={})", cfg.seed)])?;
    Ok(Generated { dataset, true_probs })
}

/// Stand-in foundation-model probabilities:
/// `q = (1 - lambda) / K + lambda * ((1 - s) * onehot(choice) + s / K)` with
/// `s = 0.05`. Mass on unavailable alternatives is kept, as a real model's
/// would be.
pub fn make_fm_probs(ds: &Dataset, lambda: f64, source_tag: &str, split: &str) -> Result<FmProbabilities> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Argument(format!(
            "informativeness must lie in [0, 1], got {lambda}"
        )));
    }
    let k = ds.n_alternatives();
    let base = (1.0 - lambda) / k as f64 + lambda * FM_SMOOTHING / k as f64;
    let entries = ds
        .rows
        .iter()
        .map(|r| {
            let mut q = vec![base; k];
            q[r.choice] += lambda * (1.0 - FM_SMOOTHING);
            (r.id, q)
        })
        .collect();
    FmProbabilities::new(source_tag, split, ds.alt_set.names().to_vec(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n: 500,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        let c = generate(&small(4)).unwrap();
        assert_eq!(a.dataset.checksum(), b.dataset.checksum());
        assert_ne!(a.dataset.checksum(), c.dataset.checksum());
    }

    #[test]
    fn rows_are_valid_and_never_empty() {
        let cfg = GeneratorConfig {
            availability_rate: 0.2,
            ..small(1)
        };
        let g = generate(&cfg).unwrap();
        for (r, p) in g.dataset.rows.iter().zip(&g.true_probs) {
            assert!(r.n_available() >= 1);
            assert!(r.avail[r.choice]);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn default_truth_has_vot_120() {
        assert_eq!(GeneratorConfig::default().true_vot(), 120.0);
    }

    #[test]
    fn fm_rows_follow_the_mixture() {
        let g = generate(&small(0)).unwrap();
        let q0 = make_fm_probs(&g.dataset, 0.0, "synthetic", "train").unwrap();
        assert!(q0.rows().iter().all(|q| q.iter().all(|&v| v == 1.0 / 3.0)));
        let q1 = make_fm_probs(&g.dataset, 1.0, "synthetic", "train").unwrap();
        let r = &g.dataset.rows[0];
        let chosen = q1.get(r.id).unwrap()[r.choice];
        assert!((chosen - (0.95 + 0.05 / 3.0)).abs() < 1e-15);
        assert!(make_fm_probs(&g.dataset, 1.5, "x", "train").is_err());
    }

    #[test]
    fn identical_alternatives_get_equal_shares() {
        let cfg = GeneratorConfig {
            alternatives: vec!["a".into(), "b".into()],
            asc: vec![0.0],
            n: 20_000,
            availability_rate: 1.0,
            ..Default::default()
        };
        let g = generate(&cfg).unwrap();
        let n = g.dataset.len() as f64;
        let share = g.dataset.rows.iter().filter(|r| r.choice == 0).count() as f64 / n;
        let sigma = (0.25 / n).sqrt();
        assert!((share - 0.5).abs() < 3.0 * sigma, "share {share}");
    }
}
