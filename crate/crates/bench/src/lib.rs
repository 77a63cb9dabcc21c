//! Shared fixtures for the benchmarks in `benches/`.

use choice_core::{
    fit_stage1, generate, make_fm_probs, Dataset, FmProbabilities, GeneratorConfig, MnlModel, OptimConfig,
};

pub struct Fixture {
    pub data: Dataset,
    pub model: MnlModel,
    pub fm: FmProbabilities,
}

/// `n` synthetic rows, a Stage-1 fit on them, and a half-informative probability table.
pub fn fixture(n: usize) -> Fixture {
    let cfg = GeneratorConfig {
        n,
        ..GeneratorConfig::default()
    };
    let data = generate(&cfg).expect("valid generator config").dataset;
    let model = fit_stage1(&data, &data, &cfg.spec(), &OptimConfig::stage1()).expect("fit");
    let fm = make_fm_probs(&data, 0.5, "synthetic", "all").expect("probabilities");
    Fixture { data, model, fm }
}
