//! Comparison tables across audited models and the repeated-subsample study.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::adapter::{fit_stage2, Stage2Config};
use crate::audit::{full_audit, AdapterPredictor, AuditConfig, AuditReport, Metric};
use crate::data::{split, subsample, Dataset, SplitConfig};
use crate::error::{Error, Result};
use crate::fm_probs::FmProbabilities;
use crate::mnl::{fit_stage1, UtilitySpec};
use crate::optim::OptimConfig;
use crate::synthetic::make_fm_probs;

/// Leak percentages below this are printed as `<.001`.
const LEAK_DISPLAY_FLOOR: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotCell {
    pub context: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy: Metric<f64>,
    /// Lowest rate across the perturbed attributes.
    pub monotonicity: Metric<f64>,
    /// Model-reported VOT per context, else the finite-difference median.
    pub vot: Metric<Vec<VotCell>>,
    /// Mean probability on unavailable alternatives (a fraction).
    pub leak: Metric<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub dataset: String,
    pub rows: Vec<ComparisonRow>,
}

fn vot_cells(report: &AuditReport) -> Metric<Vec<VotCell>> {
    match &report.vot {
        Metric::Value(stats) => {
            let cells: Vec<VotCell> = stats
                .iter()
                .filter_map(|s| {
                    s.analytic.or(s.median).map(|value| VotCell {
                        context: s.context.clone(),
                        value,
                    })
                })
                .collect();
            if cells.is_empty() {
                Metric::NotApplicable
            } else {
                Metric::Value(cells)
            }
        }
        Metric::NotApplicable => Metric::NotApplicable,
        Metric::Omitted => Metric::Omitted,
    }
}

/// One row per report; every report must come from the same dataset.
pub fn compare_models(reports: &[AuditReport]) -> Result<ComparisonTable> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Argument("nothing to compare".into()))?;
    if let Some(other) = reports.iter().find(|r| r.dataset != first.dataset) {
        return Err(Error::Argument(format!(
            "reports come from different datasets (`{}` and `{}`)",
            first.dataset, other.dataset
        )));
    }
    Ok(ComparisonTable {
        dataset: first.dataset.clone(),
        rows: reports
            .iter()
            .map(|r| ComparisonRow {
                model: r.model.clone(),
                accuracy: r.accuracy.clone(),
                monotonicity: r.monotonicity_rate(),
                vot: vot_cells(r),
                leak: r.availability_leak.clone(),
            })
            .collect(),
    })
}

fn cell<T>(m: &Metric<T>, show: impl Fn(&T) -> String) -> String {
    match m {
        Metric::Value(v) => show(v),
        Metric::NotApplicable => "n/a".into(),
        Metric::Omitted => "---".into(),
    }
}

fn leak_cell(leak: f64) -> String {
    let pct = 100.0 * leak;
    if pct < LEAK_DISPLAY_FLOOR {
        "<.001".into()
    } else {
        format!("{pct:.3}")
    }
}

impl ComparisonTable {
    /// Monospace table: accuracy and monotonicity in percent, VOT in
    /// currency per hour, leak in percent.
    pub fn render(&self) -> String {
        let header = ["Model", "Acc (%)", "Mono (%)", "VOT", "Leak (%)"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.model.clone(),
                    cell(&r.accuracy, |a| format!("{:.1}", 100.0 * a)),
                    cell(&r.monotonicity, |m| format!("{:.1}", 100.0 * m)),
                    cell(&r.vot, |cells| match cells.as_slice() {
                        [one] => format!("{:.1}", one.value),
                        many => many
                            .iter()
                            .map(|c| format!("{} {:.1}", c.context, c.value))
                            .collect::<Vec<_>>()
                            .join(" / "),
                    }),
                    cell(&r.leak, |l| leak_cell(*l)),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..5)
            .map(|j| {
                body.iter()
                    .map(|r| r[j].len())
                    .chain([header[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: [&str; 5]| {
            let mut s = format!("{:<w$}", cells[0], w = widths[0]);
            for j in 1..5 {
                s.push_str(&format!("  {:>w$}", cells[j], w = widths[j]));
            }
            s.trim_end().to_string()
        };
        let mut out = format!("dataset: {}\n", self.dataset);
        out.push_str(&line(header));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 8));
        out.push('\n');
        for r in &body {
            out.push_str(&line([&r[0], &r[1], &r[2], &r[3], &r[4]]));
            out.push('\n');
        }
        out
    }
}

/// Machine-readable form of any report type (pretty JSON).
pub fn to_machine<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn from_machine<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}

/// Where each run gets its foundation-model probabilities.
#[derive(Debug, Clone)]
pub enum FmSupply {
    /// A stored table covering every observation that can be drawn.
    Table(FmProbabilities),
    /// The synthetic uniform/one-hot mixture at this informativeness.
    Synthetic { lambda: f64, source_tag: String },
}

impl FmSupply {
    fn for_split(&self, ds: &Dataset, split: &str) -> Result<FmProbabilities> {
        match self {
            FmSupply::Table(t) => t.restricted_to(ds),
            FmSupply::Synthetic { lambda, source_tag } => make_fm_probs(ds, *lambda, source_tag, split),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub spec: UtilitySpec,
    /// Rows drawn per run; `None` uses the whole dataset.
    pub subsample_n: Option<usize>,
    pub ratios: [f64; 3],
    pub stage1: OptimConfig,
    pub stage2: Stage2Config,
    pub audit: AuditConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub n_test: usize,
    pub mnl_accuracy: f64,
    pub adapter_accuracy: f64,
    pub gain: f64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub dataset: String,
    pub runs: Vec<RunRow>,
    pub mean_gain: f64,
    /// Sample standard deviation of the gains; undefined for one run.
    pub sd_gain: Option<f64>,
    pub se_gain: Option<f64>,
    /// Two-sided 95% t-interval for the mean gain.
    pub ci95: Option<(f64, f64)>,
    pub all_positive: bool,
    pub valid: bool,
}

impl StudySummary {
    pub fn render(&self) -> String {
        let pp = |x: f64| format!("{:+.2}", 100.0 * x);
        let opt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut out = format!("dataset: {}\n", self.dataset);
        out.push_str(&format!(
            "{:>8}  {:>6}  {:>8}  {:>8}  {:>8}  {}\n",
            "seed", "n_test", "MNL", "Adapter", "gain", "valid"
        ));
        for r in &self.runs {
            out.push_str(&format!(
                "{:>8}  {:>6}  {:>8.2}  {:>8.2}  {:>8}  {}\n",
                r.seed,
                r.n_test,
                100.0 * r.mnl_accuracy,
                100.0 * r.adapter_accuracy,
                pp(r.gain),
                if r.failures.is_empty() { "yes" } else { "NO" }
            ));
        }
        out.push_str(&format!("mean gain (pp): {}\n", pp(self.mean_gain)));
        out.push_str(&format!("sd (pp): {}\n", opt(self.sd_gain)));
        out.push_str(&format!("se (pp): {}\n", opt(self.se_gain)));
        out.push_str(&format!(
            "95% CI (pp): {}\n",
            self.ci95
                .map_or("n/a".to_string(), |(lo, hi)| format!("[{}, {}]", pp(lo), pp(hi)))
        ));
        out.push_str(&format!(
            "all gains positive: {}\n",
            if self.all_positive { "yes" } else { "no" }
        ));
        for r in self.runs.iter().filter(|r| !r.failures.is_empty()) {
            for f in &r.failures {
                out.push_str(&format!("seed {}: {f}\n", r.seed));
            }
        }
        out
    }
}

/// One full two-stage run on a seeded subsample.
pub fn run_pipeline(ds: &Dataset, fm: &FmSupply, cfg: &PipelineConfig, seed: u64) -> Result<RunRow> {
    let sample = match cfg.subsample_n {
        Some(n) if n < ds.len() => subsample(ds, n, seed)?,
        _ => ds.clone(),
    };
    let parts = split(&sample, &SplitConfig::new(cfg.ratios, seed)?)?;
    let stage1 = OptimConfig {
        seed,
        ..cfg.stage1.clone()
    };
    let mnl = fit_stage1(&parts.train, &parts.val, &cfg.spec, &stage1)?;
    let stage2 = Stage2Config {
        optim: OptimConfig {
            seed,
            ..cfg.stage2.optim.clone()
        },
        hidden: cfg.stage2.hidden,
    };
    let fm_train = fm.for_split(&parts.train, "train")?;
    let fm_val = fm.for_split(&parts.val, "val")?;
    let fm_test = fm.for_split(&parts.test, "test")?;
    let adapter = fit_stage2(
        &parts.train,
        &parts.val,
        &fm_train,
        &fm_val,
        &mnl,
        &mnl.checksum(),
        &stage2,
    )?;
    let mnl_report = full_audit(&mnl, &parts.test, &cfg.audit)?;
    let adapter_report = full_audit(
        &AdapterPredictor {
            model: &adapter,
            fm: &fm_test,
        },
        &parts.test,
        &cfg.audit,
    )?;
    let acc = |r: &AuditReport| r.accuracy.value().copied().unwrap_or(f64::NAN);
    let mut failures = mnl_report.validity_failures();
    failures.extend(adapter_report.validity_failures());
    Ok(RunRow {
        seed,
        n_test: parts.test.len(),
        mnl_accuracy: acc(&mnl_report),
        adapter_accuracy: acc(&adapter_report),
        gain: acc(&adapter_report) - acc(&mnl_report),
        failures,
    })
}

/// Mean, spread and t-interval of per-run gains.
pub fn summarize(dataset: &str, runs: Vec<RunRow>) -> Result<StudySummary> {
    if runs.is_empty() {
        return Err(Error::Argument("no runs to summarize".into()));
    }
    let n = runs.len() as f64;
    let gains: Vec<f64> = runs.iter().map(|r| r.gain).collect();
    let mean = gains.iter().sum::<f64>() / n;
    let (sd, se, ci) = if runs.len() > 1 {
        let var = gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        let se = sd / n.sqrt();
        let t = StudentsT::new(0.0, 1.0, n - 1.0)
            .map_err(|e| Error::Domain(e.to_string()))?
            .inverse_cdf(0.975);
        (Some(sd), Some(se), Some((mean - t * se, mean + t * se)))
    } else {
        (None, None, None)
    };
    Ok(StudySummary {
        dataset: dataset.to_string(),
        all_positive: gains.iter().all(|&g| g > 0.0),
        valid: runs.iter().all(|r| r.failures.is_empty()),
        runs,
        mean_gain: mean,
        sd_gain: sd,
        se_gain: se,
        ci95: ci,
    })
}

/// Runs the pipeline once per seed, in seed order.
pub fn subsample_study(ds: &Dataset, fm: &FmSupply, cfg: &PipelineConfig, seeds: &[u64]) -> Result<StudySummary> {
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::Argument(format!("seed {dup} is listed twice")));
    }
    let runs = seeds
        .iter()
        .map(|&s| run_pipeline(ds, fm, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    summarize(&cfg.audit.dataset, runs)
}
