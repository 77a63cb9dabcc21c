//! Discrete-choice estimation and behavioral auditing.
//!
//! The structural model is a multinomial logit whose time and cost
//! coefficients are constrained negative. A second stage adds a correction
//! built from externally produced foundation-model probabilities without
//! touching the structural parameters, so monotonicity, availability
//! compliance and the analytic value of time carry over unchanged.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod audit;
pub mod data;
pub mod error;
pub mod fm_probs;
pub mod mnl;
pub mod optim;
pub mod report;
pub mod synthetic;

pub use adapter::{distill_mnl, fit_stage2, AdapterModel, CorrectionParams, Stage2Config};
pub use audit::{full_audit, AuditConfig, AuditReport, ChoiceModel, Metric};
pub use data::{split, subsample, AlternativeSet, Dataset, Observation, Schema, SplitConfig, Splits};
pub use error::{Error, Result};
pub use fm_probs::{load_fm_probs, safe_log, FmProbabilities};
pub use mnl::{fit_stage1, vot_analytic, MnlModel, StructuralParams, UtilitySpec};
pub use optim::OptimConfig;
pub use report::{compare_models, subsample_study, ComparisonTable, StudySummary};
pub use synthetic::{generate, make_fm_probs, GeneratorConfig};
