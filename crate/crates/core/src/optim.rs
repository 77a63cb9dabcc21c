//! Full-batch adaptive-moment gradient ascent with validation early stopping.
//!
//! The step size is halved whenever the monitored objective has not improved
//! for `early_stop_patience` iterations; the best monitored iterate is what
//! gets returned.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows per work unit when objectives are evaluated in parallel. Partial sums
/// are combined in chunk order, so results do not depend on the thread count.
pub const CHUNK_ROWS: usize = 256;

/// A smooth objective to be maximized.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub max_iters: usize,
    pub step_size: f64,
    /// Stop once the gradient infinity-norm falls below this.
    pub tolerance: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    /// Halvings allowed before giving up on further progress.
    pub max_step_decays: u32,
    /// Half-width of a seeded uniform perturbation added to the initial point.
    #[serde(default)]
    pub init_jitter: f64,
}

impl OptimConfig {
    pub fn stage1() -> Self {
        Self {
            max_iters: 5000,
            step_size: 0.05,
            tolerance: 1e-6,
            seed: 0,
            early_stop_patience: 50,
            max_step_decays: 20,
            init_jitter: 0.0,
        }
    }

    pub fn stage2() -> Self {
        Self {
            max_iters: 3000,
            step_size: 0.01,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.max_iters == 0
            || !(self.step_size > 0.0)
            || !(self.tolerance > 0.0)
            || self.early_stop_patience == 0
            || !(self.init_jitter >= 0.0);
        if bad {
            return Err(Error::Argument(format!("invalid optimizer config {self:?}")));
        }
        Ok(())
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::stage1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    StepDecayed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimOutcome {
    #[serde(skip)]
    pub x: Vec<f64>,
    pub iterations: usize,
    pub best_iteration: usize,
    pub stop: StopReason,
    /// Gradient infinity-norm of the training objective at the returned point.
    pub grad_inf_norm: f64,
    pub train_objective: f64,
    /// Monitored (validation) objective at the returned point.
    pub monitor_objective: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Adds the seeded initial jitter, if any.
pub fn jittered(x0: &[f64], cfg: &OptimConfig) -> Vec<f64> {
    if cfg.init_jitter == 0.0 {
        return x0.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    x0.iter()
        .map(|v| v + rng.random_range(-cfg.init_jitter..=cfg.init_jitter))
        .collect()
}

/// Maximizes `train`, monitoring `monitor` (the training objective itself when
/// `None`). Coordinates with `frozen[i] == true` never move.
pub fn maximize(
    train: &dyn Objective,
    monitor: Option<&dyn Objective>,
    x0: Vec<f64>,
    frozen: Option<&[bool]>,
    cfg: &OptimConfig,
) -> Result<OptimOutcome> {
    cfg.validate()?;
    let n = train.dim();
    assert_eq!(x0.len(), n, "initial point has wrong dimension");
    let monitor_value = |x: &[f64]| match monitor {
        Some(m) => m.value(x),
        None => train.value(x),
    };

    let mut x = x0;
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut step = cfg.step_size;
    let mut best = monitor_value(&x);
    if !best.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    let mut best_x = x.clone();
    let mut best_iteration = 0;
    let mut stall = 0;
    let mut decays = 0;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    for it in 1..=cfg.max_iters {
        let (f, mut g) = train.value_and_gradient(&x);
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: it });
        }
        if let Some(frozen) = frozen {
            for (gi, &fz) in g.iter_mut().zip(frozen) {
                if fz {
                    *gi = 0.0;
                }
            }
        }
        if inf_norm(&g) < cfg.tolerance {
            stop = StopReason::GradientTolerance;
            break;
        }
        iterations = it;
        let bc1 = 1.0 - BETA1.powi(it as i32);
        let bc2 = 1.0 - BETA2.powi(it as i32);
        for i in 0..n {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            x[i] += step * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
        }

        let mv = monitor_value(&x);
        if !mv.is_finite() {
            return Err(Error::NonFinite { iteration: it });
        }
        if mv > best {
            best = mv;
            best_x.clone_from(&x);
            best_iteration = it;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.early_stop_patience {
                stall = 0;
                step *= 0.5;
                decays += 1;
                if decays > cfg.max_step_decays {
                    stop = StopReason::StepDecayed;
                    break;
                }
            }
        }
    }

    let (train_objective, mut g) = train.value_and_gradient(&best_x);
    if let Some(frozen) = frozen {
        for (gi, &fz) in g.iter_mut().zip(frozen) {
            if fz {
                *gi = 0.0;
            }
        }
    }
    Ok(OptimOutcome {
        x: best_x,
        iterations,
        best_iteration,
        stop,
        grad_inf_norm: inf_norm(&g),
        train_objective,
        monitor_objective: best,
    })
}

/// Sums per-chunk `(value, gradient)` contributions in chunk order.
pub(crate) fn reduce_chunks<F>(n_rows: usize, dim: usize, per_chunk: F) -> (f64, Vec<f64>)
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) -> f64 + Sync,
{
    let starts: Vec<usize> = (0..n_rows).step_by(CHUNK_ROWS).collect();
    let partials: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let mut g = vec![0.0; dim];
            let f = per_chunk(s..(s + CHUNK_ROWS).min(n_rows), &mut g);
            (f, g)
        })
        .collect();
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    for (f, g) in partials {
        value += f;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += gi;
        }
    }
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x) = -sum (x_i - c_i)^2 / 2
    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value(&self, x: &[f64]) -> f64 {
            -0.5 * x.iter().zip(&self.0).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
        }
        fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
            (self.value(x), x.iter().zip(&self.0).map(|(a, c)| c - a).collect())
        }
    }

    #[test]
    fn reaches_quadratic_maximum() {
        let obj = Quadratic(vec![1.5, -2.0, 0.25]);
        let out = maximize(&obj, None, vec![0.0; 3], None, &OptimConfig::stage1()).unwrap();
        for (x, c) in out.x.iter().zip(&obj.0) {
            assert!((x - c).abs() < 1e-5, "{x} vs {c}");
        }
        assert!(out.train_objective > -1e-9);
    }

    #[test]
    fn frozen_coordinates_do_not_move() {
        let obj = Quadratic(vec![1.0, 1.0]);
        let out = maximize(&obj, None, vec![0.0, 0.0], Some(&[false, true]), &OptimConfig::stage1()).unwrap();
        assert_eq!(out.x[1], 0.0);
        assert!((out.x[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn monitored_objective_never_gets_worse_than_start() {
        let train = Quadratic(vec![3.0]);
        let val = Quadratic(vec![-1.0]);
        let out = maximize(&train, Some(&val), vec![0.0], None, &OptimConfig::stage2()).unwrap();
        assert_eq!(out.x, vec![0.0]);
        assert_eq!(out.best_iteration, 0);
    }

    #[test]
    fn rejects_nonsense_config() {
        let cfg = OptimConfig {
            step_size: -1.0,
            ..OptimConfig::stage1()
        };
        let obj = Quadratic(vec![0.0]);
        assert!(matches!(
            maximize(&obj, None, vec![0.0], None, &cfg),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn chunked_reduction_matches_serial_sum() {
        let n = 3 * CHUNK_ROWS + 17;
        let (v, g) = reduce_chunks(n, 1, |r, g| {
            g[0] += r.len() as f64;
            r.map(|i| i as f64).sum()
        });
        assert_eq!(v, (0..n).map(|i| i as f64).sum::<f64>());
        assert_eq!(g[0], n as f64);
    }
}
