#![allow(dead_code)]

use choice_core::adapter::{adapter_log_likelihood, grad_adapter_log_likelihood, CorrectionParams};
use choice_core::data::{AlternativeSet, Dataset, Observation};
use choice_core::mnl::{
    grad_log_likelihood, log_likelihood, ConvergenceReport, CostExclusion, Interaction, MnlModel, StructuralParams,
    UtilitySpec,
};
use choice_core::optim::StopReason;
use choice_core::FmProbabilities;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub spec: UtilitySpec,
    pub params: StructuralParams,
    pub data: Dataset,
    pub model: MnlModel,
    pub fm: FmProbabilities,
}

/// `|a - b| / max(|a|, |b|, 1)`: relative for large entries, absolute near
/// zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn dummy_report() -> ConvergenceReport {
    ConvergenceReport {
        iterations: 0,
        best_iteration: 0,
        stop: StopReason::MaxIterations,
        grad_inf_norm: 0.0,
        train_objective: 0.0,
        val_objective: None,
        non_identified: vec![],
    }
}

/// Small random dataset with 2-4 alternatives, partial availability, an
/// interaction and a cost exclusion, plus random parameters and random
/// probability rows.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let k = rng.random_range(2..=4);
    let names: Vec<String> = (0..k).map(|j| format!("m{j}")).collect();
    let alt_set = AlternativeSet::new(names.clone(), vec!["time".into(), "cost".into()]).unwrap();
    let rows = (0..30)
        .map(|i| {
            let attrs = (0..2 * k).map(|_| rng.random_range(0.0..3.0)).collect();
            let mut avail: Vec<bool> = (0..k).map(|_| rng.random_bool(0.75)).collect();
            let choice = rng.random_range(0..k);
            avail[choice] = true;
            Observation {
                id: i + 1,
                attrs,
                socio: vec![rng.random_range(0..2) as f64, rng.random_range(0.0..1.0)],
                avail,
                choice,
            }
        })
        .collect();
    let data = Dataset::new(alt_set, vec!["ga".into(), "x".into()], rows, vec![]).unwrap();
    let mut spec = UtilitySpec::generic(
        &names,
        vec![Interaction {
            name: "x_first".into(),
            covariate: "x".into(),
            alternatives: vec![names[0].clone()],
        }],
    );
    spec.cost_exclusion = Some(CostExclusion {
        covariate: "ga".into(),
        attribute: "cost".into(),
        alternatives: vec![names[0].clone()],
    });
    let mut u = || rng.random_range(-1.0..1.0);
    let params = StructuralParams {
        theta: vec![u(), u()],
        asc: (0..k - 1).map(|_| u()).collect(),
        w_inter: vec![u()],
    };
    let model = MnlModel::new(spec.clone(), data.schema(), params.clone(), dummy_report()).unwrap();
    let entries = data
        .rows
        .iter()
        .map(|r| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
            let s: f64 = raw.iter().sum();
            (r.id, raw.iter().map(|v| v / s).collect())
        })
        .collect();
    let fm = FmProbabilities::new("random", "train", names, entries).unwrap();
    Instance {
        spec,
        params,
        data,
        model,
        fm,
    }
}

const FD_STEP: f64 = 1e-5;

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], j: usize) -> f64 {
    let (mut up, mut dn) = (x.to_vec(), x.to_vec());
    up[j] += FD_STEP;
    dn[j] -= FD_STEP;
    (f(&up) - f(&dn)) / (2.0 * FD_STEP)
}

/// Largest relative error between the structural gradient and central
/// differences of the log-likelihood.
pub fn structural_gradient_error(inst: &Instance) -> f64 {
    let g = grad_log_likelihood(&inst.params, &inst.spec, &inst.data).unwrap();
    let analytic = [g.theta, g.asc, g.w_inter].concat();
    let x = inst.params.to_vector();
    let f = |x: &[f64]| log_likelihood(&StructuralParams::from_vector(&inst.spec, x), &inst.spec, &inst.data).unwrap();
    (0..x.len())
        .map(|j| relative_error(analytic[j], central_difference(f, &x, j)))
        .fold(0.0, f64::max)
}

/// Correction parameters with every block away from zero.
pub fn busy_correction(k: usize, hidden: usize, seed: u64) -> CorrectionParams {
    let c = CorrectionParams::initial(k, hidden, seed);
    let v: Vec<f64> = c
        .to_vector()
        .iter()
        .enumerate()
        .map(|(i, w)| w + 0.3 * (i as f64 * 1.7 + seed as f64).sin())
        .collect();
    CorrectionParams::from_vector(k, hidden, &v)
}

/// Same check for the correction parameters with the structural part fixed.
pub fn correction_gradient_error(inst: &Instance, seed: u64) -> f64 {
    let k = inst.data.n_alternatives();
    let c = busy_correction(k, 4, seed);
    let analytic = grad_adapter_log_likelihood(&inst.model, &inst.data, &inst.fm, &c)
        .unwrap()
        .to_vector();
    let x = c.to_vector();
    let f = |x: &[f64]| {
        adapter_log_likelihood(
            &inst.model,
            &inst.data,
            &inst.fm,
            &CorrectionParams::from_vector(k, 4, x),
        )
        .unwrap()
    };
    (0..x.len())
        .map(|j| relative_error(analytic[j], central_difference(f, &x, j)))
        .fold(0.0, f64::max)
}

/// Column order of the LPMC trip file.
pub const LPMC_HEADER: [&str; 17] = [
    "trip_id",
    "travel_mode",
    "age",
    "female",
    "driving_license",
    "car_ownership",
    "distance",
    "dur_walking",
    "dur_cycling",
    "dur_pt_access",
    "dur_pt_rail",
    "dur_pt_bus",
    "dur_pt_int",
    "dur_driving",
    "cost_transit",
    "cost_driving_fuel",
    "cost_driving_ccharge",
];

/// Writes `n` simulated trips in the LPMC column layout (hours, GBP), with
/// modes drawn from a logit whose values of time are 8 GBP/hr (public
/// transport) and about 16.7 GBP/hr (driving).
pub fn write_lpmc_like(path: &std::path::Path, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LPMC_HEADER.join("\t") + "\n";
    for i in 0..n {
        let d: f64 = rng.random_range(0.3..15.0);
        let walk = d / 5.0 * rng.random_range(0.9..1.1);
        let cycle = d / 15.0 * rng.random_range(0.9..1.1);
        let access = rng.random_range(0.05..0.25);
        let (rail, bus) = if rng.random_bool(0.5) {
            (d / 30.0, 0.0)
        } else {
            (0.0, d / 15.0)
        };
        let int = rng.random_range(0.0..0.1);
        let drive = d / 25.0 + rng.random_range(0.0..0.2);
        let transit = 1.5 + 0.1 * d;
        let fuel = 0.15 * d;
        let ccharge = if rng.random_bool(0.1) { 11.5 } else { 0.0 };
        let license = rng.random_bool(0.6) as u8;
        let cars = rng.random_range(0..3u8);
        let t_pt = access + rail + bus + int;
        let v = [
            1.0 - 4.0 * walk,
            -1.8 - 3.0 * cycle,
            0.3 - 2.0 * t_pt - 0.25 * transit,
            -1.5 - 2.5 * drive - 0.15 * (fuel + ccharge) + 1.2 * license as f64 + 0.5 * cars as f64,
        ];
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let mut u = rng.random_range(0.0..w.iter().sum::<f64>());
        let mode = w
            .iter()
            .position(|&x| {
                u -= x;
                u < 0.0
            })
            .unwrap_or(3)
            + 1;
        let age = rng.random_range(18..80);
        let female = rng.random_range(0..2);
        out.push_str(&format!(
            "{}\t{mode}\t{age}\t{female}\t{license}\t{cars}\t{:.0}\t{walk}\t{cycle}\t{access}\t{rail}\t{bus}\t{int}\t{drive}\t{transit}\t{fuel}\t{ccharge}\n",
            i + 1,
            d * 1000.0
        ));
    }
    std::fs::write(path, out).unwrap();
}
