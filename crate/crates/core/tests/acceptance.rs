//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.
//!
//! Real data files are used when present: `SWISSMETRO_PATH` (default
//! `data/swissmetro.dat`) and `LPMC_PATH` (default `data/lpmc.dat`). Without
//! an LPMC file the LPMC leg runs on simulated trips written in the LPMC
//! column layout.

mod common;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use choice_core::adapter::{cross_entropy, distill_mnl, fit_stage2, AdapterModel, Stage2Config};
use choice_core::audit::{full_audit, AdapterPredictor, AuditConfig, AuditReport, Metric};
use choice_core::data::{load_dataset, preprocess_swissmetro, split, subsample, Dataset, Layout, SplitConfig, Splits};
use choice_core::mnl::{fit_stage1, MnlModel, UtilitySpec};
use choice_core::optim::OptimConfig;
use choice_core::synthetic::{generate, make_fm_probs, GeneratorConfig};
use choice_core::{Error, FmProbabilities};
use common::{correction_gradient_error, random_instance, structural_gradient_error, write_lpmc_like};

const RATIOS: [f64; 3] = [0.70, 0.15, 0.15];
const SPLIT_SEED: u64 = 0;
const LPMC_SUBSAMPLE: usize = 10_000;
const VALIDITY_LAMBDA: f64 = 0.5;

type Outcome = Result<(bool, String), Error>;

fn workspace_file(env: &str, default: &str) -> PathBuf {
    std::env::var_os(env)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(default))
}

fn splits(ds: &Dataset) -> Result<Splits, Error> {
    split(ds, &SplitConfig::new(RATIOS, SPLIT_SEED)?)
}

fn swissmetro() -> Result<Option<Dataset>, Error> {
    let path = workspace_file("SWISSMETRO_PATH", "data/swissmetro.dat");
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(preprocess_swissmetro(&load_dataset(&path, Layout::Swissmetro)?)?))
}

fn lpmc(scratch: &Path) -> Result<(Dataset, &'static str), Error> {
    let real = workspace_file("LPMC_PATH", "data/lpmc.dat");
    let (path, origin) = if real.exists() {
        (real, "LPMC file")
    } else {
        let p = scratch.join("lpmc_like.dat");
        write_lpmc_like(&p, 2 * LPMC_SUBSAMPLE, 11);
        (p, "simulated trips in the LPMC layout")
    };
    let ds = load_dataset(&path, Layout::Lpmc)?;
    let ds = if ds.len() > LPMC_SUBSAMPLE {
        subsample(&ds, LPMC_SUBSAMPLE, SPLIT_SEED)?
    } else {
        ds
    };
    Ok((ds, origin))
}

/// Synthetic FM probabilities for one split, passed through a file.
fn fm_file(ds: &Dataset, split_name: &str, scratch: &Path, tag: &str) -> Result<FmProbabilities, Error> {
    let path = scratch.join(format!("{tag}_{split_name}.csv"));
    make_fm_probs(ds, VALIDITY_LAMBDA, "synthetic", split_name)?.write(&path)?;
    choice_core::load_fm_probs(&path, ds)
}

fn stage1(seed: u64) -> OptimConfig {
    OptimConfig {
        seed,
        ..OptimConfig::stage1()
    }
}

fn stage2(seed: u64) -> Stage2Config {
    Stage2Config {
        optim: OptimConfig {
            seed,
            ..OptimConfig::stage2()
        },
        ..Default::default()
    }
}

struct Fitted {
    mnl: MnlModel,
    adapter: AdapterModel,
    mnl_report: AuditReport,
    adapter_report: AuditReport,
    checksum_before: String,
    vot_before: Vec<u64>,
}

fn fit_both(ds: &Dataset, spec: &UtilitySpec, tag: &str, scratch: &Path) -> Result<Fitted, Error> {
    let s = splits(ds)?;
    let mnl = fit_stage1(&s.train, &s.val, spec, &stage1(SPLIT_SEED))?;
    let checksum_before = mnl.checksum();
    let vots = |m: &MnlModel| -> Result<Vec<u64>, Error> {
        spec.vot_contexts
            .iter()
            .map(|c| m.vot(&c.name).map(f64::to_bits))
            .collect()
    };
    let vot_before = vots(&mnl)?;
    let fm_train = fm_file(&s.train, "train", scratch, tag)?;
    let fm_val = fm_file(&s.val, "val", scratch, tag)?;
    let fm_test = fm_file(&s.test, "test", scratch, tag)?;
    let adapter = fit_stage2(
        &s.train,
        &s.val,
        &fm_train,
        &fm_val,
        &mnl,
        &checksum_before,
        &stage2(SPLIT_SEED),
    )?;
    let cfg = AuditConfig::for_dataset(tag);
    let mnl_report = full_audit(&mnl, &s.test, &cfg)?;
    let adapter_report = full_audit(
        &AdapterPredictor {
            model: &adapter,
            fm: &fm_test,
        },
        &s.test,
        &cfg,
    )?;
    Ok(Fitted {
        mnl,
        adapter,
        mnl_report,
        adapter_report,
        checksum_before,
        vot_before,
    })
}

fn validity_problems(r: &AuditReport) -> Vec<String> {
    let mut out = r.validity_failures();
    for (attr, m) in &r.monotonicity {
        if !matches!(m, Metric::Value(_)) {
            out.push(format!("{}: monotonicity in {attr} was not measured", r.model));
        }
    }
    match &r.vot {
        Metric::Value(v) if v.iter().all(|s| s.analytic.is_some_and(|a| a > 0.0)) => {}
        _ => out.push(format!("{}: no positive analytic VOT", r.model)),
    }
    out
}

fn leak_text(r: &AuditReport) -> String {
    match r.availability_leak {
        Metric::Value(l) => format!("{l:.1e}"),
        _ => "n/a (all available)".into(),
    }
}

struct Legs {
    fitted: Vec<(String, Fitted)>,
    skipped: Vec<String>,
}

fn fit_legs(scratch: &Path) -> Result<Legs, Error> {
    let mut fitted = Vec::new();
    let mut skipped = Vec::new();
    match swissmetro()? {
        Some(ds) => fitted.push((
            "swissmetro".to_string(),
            fit_both(&ds, &UtilitySpec::swissmetro(), "swissmetro", scratch)?,
        )),
        None => skipped.push("swissmetro (no data file)".to_string()),
    }
    let (ds, origin) = lpmc(scratch)?;
    fitted.push((
        format!("lpmc [{origin}]"),
        fit_both(&ds, &UtilitySpec::lpmc(), "lpmc", scratch)?,
    ));
    for seed in 0..5 {
        let cfg = GeneratorConfig {
            seed: 100 + seed,
            n: 5_000,
            ..Default::default()
        };
        let g = generate(&cfg)?;
        fitted.push((
            format!("synthetic-{}", cfg.seed),
            fit_both(&g.dataset, &cfg.spec(), &format!("synthetic-{}", cfg.seed), scratch)?,
        ));
    }
    Ok(Legs { fitted, skipped })
}

fn constructive_validity(legs: &Legs) -> Outcome {
    let mut problems = Vec::new();
    let mut notes = Vec::new();
    for (name, f) in &legs.fitted {
        for r in [&f.mnl_report, &f.adapter_report] {
            problems.extend(validity_problems(r).into_iter().map(|p| format!("{name}: {p}")));
        }
        notes.push(format!(
            "{name}: mono {:?}/{:?}, leak {}/{}",
            f.mnl_report.monotonicity_rate().value(),
            f.adapter_report.monotonicity_rate().value(),
            leak_text(&f.mnl_report),
            leak_text(&f.adapter_report)
        ));
    }
    notes.extend(legs.skipped.iter().map(|s| format!("skipped {s}")));
    let ok = problems.is_empty() && legs.skipped.is_empty();
    Ok((ok, [problems, notes].concat().join("; ")))
}

fn non_contamination(legs: &Legs) -> Outcome {
    let mut problems = Vec::new();
    for (name, f) in &legs.fitted {
        if f.mnl.checksum() != f.checksum_before || f.adapter.structural_checksum() != f.checksum_before {
            problems.push(format!("{name}: structural checksum changed"));
        }
        if f.adapter.verify().is_err() {
            problems.push(format!("{name}: adapter fails its own checksum"));
        }
        let after: Vec<u64> = f
            .mnl
            .spec()
            .vot_contexts
            .iter()
            .map(|c| f.adapter.vot(&c.name).map(f64::to_bits))
            .collect::<Result<_, _>>()?;
        if after != f.vot_before {
            problems.push(format!("{name}: VOT bits differ after Stage 2"));
        }
    }
    // a mismatching recorded checksum must be refused outright
    let (_, f) = &legs.fitted[legs.fitted.len() - 1];
    let g = generate(&GeneratorConfig {
        n: 300,
        ..Default::default()
    })?;
    let s = splits(&g.dataset)?;
    let fm = make_fm_probs(&g.dataset, 0.5, "synthetic", "all")?;
    let wrong = "0".repeat(64);
    let refused = matches!(
        fit_stage2(&s.train, &s.val, &fm, &fm, &f.mnl, &wrong, &stage2(0)),
        Err(Error::Checksum { .. })
    );
    if !refused {
        problems.push("a wrong recorded checksum was not rejected".into());
    }
    let detail = if problems.is_empty() {
        format!(
            "{} fitted pairs: checksums and VOT bits unchanged; wrong checksum rejected",
            legs.fitted.len()
        )
    } else {
        problems.join("; ")
    };
    Ok((problems.is_empty(), detail))
}

fn gradient_oracles() -> Outcome {
    let mut s1: f64 = 0.0;
    let mut s2: f64 = 0.0;
    for seed in 0..20 {
        let inst = random_instance(seed);
        s1 = s1.max(structural_gradient_error(&inst));
        s2 = s2.max(correction_gradient_error(&inst, seed));
    }
    Ok((
        s1 < 1e-6 && s2 < 1e-6,
        format!("20 instances; max relative error stage 1 {s1:.1e}, stage 2 {s2:.1e} (limit 1e-6)"),
    ))
}

fn synthetic_recovery() -> Outcome {
    let mut vots = Vec::new();
    let mut worst_fd: f64 = 0.0;
    for seed in 0..5 {
        let cfg = GeneratorConfig {
            seed,
            ..Default::default()
        };
        let g = generate(&cfg)?;
        let empty = Dataset::new(g.dataset.alt_set.clone(), vec![], vec![], vec![])?;
        let m = fit_stage1(&g.dataset, &empty, &cfg.spec(), &stage1(seed))?;
        let analytic = m.vot("generic")?;
        let r = full_audit(&m, &g.dataset, &AuditConfig::for_dataset("synthetic"))?;
        let fd = r.vot.value().and_then(|v| v[0].median).unwrap_or(f64::NAN);
        worst_fd = worst_fd.max(((fd - analytic) / analytic).abs());
        vots.push(analytic);
    }
    let mean = vots.iter().sum::<f64>() / vots.len() as f64;
    let truth = GeneratorConfig::default().true_vot();
    let rel = ((mean - truth) / truth).abs();
    Ok((
        rel < 0.05 && worst_fd < 0.01,
        format!(
            "VOT by seed {:.2?}, mean {mean:.2} vs {truth} ({:.2}% off, limit 5%); worst fd/analytic gap {:.4}% (limit 1%)",
            vots,
            100.0 * rel,
            100.0 * worst_fd
        ),
    ))
}

fn synthetic_gain() -> Outcome {
    let cfg = GeneratorConfig::default();
    let g = generate(&cfg)?;
    let s = splits(&g.dataset)?;
    let mnl = fit_stage1(&s.train, &s.val, &cfg.spec(), &stage1(0))?;
    let audit_cfg = AuditConfig::for_dataset("synthetic");
    let mnl_acc = *full_audit(&mnl, &s.test, &audit_cfg)?.accuracy.value().unwrap();
    let mnl_val = mnl.report().val_objective.unwrap_or(f64::NAN);
    let mut accs = Vec::new();
    let mut val0 = f64::NAN;
    for lambda in [0.0, 0.5, 1.0] {
        let fm = |ds: &Dataset, name: &str| make_fm_probs(ds, lambda, "synthetic", name);
        let a = fit_stage2(
            &s.train,
            &s.val,
            &fm(&s.train, "train")?,
            &fm(&s.val, "val")?,
            &mnl,
            &mnl.checksum(),
            &stage2(0),
        )?;
        if lambda == 0.0 {
            val0 = a.report().convergence.val_objective.unwrap_or(f64::NAN);
        }
        let fm_test = fm(&s.test, "test")?;
        let r = full_audit(
            &AdapterPredictor {
                model: &a,
                fm: &fm_test,
            },
            &s.test,
            &audit_cfg,
        )?;
        accs.push(*r.accuracy.value().unwrap());
    }
    let nondecreasing = accs.windows(2).all(|w| w[1] >= w[0]);
    let val_gap = (val0 - mnl_val).abs();
    let gain = accs[2] - mnl_acc;
    Ok((
        nondecreasing && val_gap < 1e-3 && gain >= 0.05,
        format!(
            "MNL acc {:.2}%; adapter acc at lambda 0/0.5/1: {:.2}/{:.2}/{:.2}%; lambda-0 val LL gap {val_gap:.1e} (limit 1e-3); gain at lambda 1 {:+.2}pp (need >= 5)",
            100.0 * mnl_acc,
            100.0 * accs[0],
            100.0 * accs[1],
            100.0 * accs[2],
            100.0 * gain
        ),
    ))
}

fn swissmetro_headline(legs: &Legs) -> Outcome {
    let Some((_, f)) = legs.fitted.iter().find(|(n, _)| n == "swissmetro") else {
        return Ok((false, "no Swissmetro data file (set SWISSMETRO_PATH)".into()));
    };
    let acc = *f.mnl_report.accuracy.value().unwrap();
    let vot = f.mnl.vot("generic")?;
    let acc_ok = (acc - 0.637).abs() <= 0.02;
    let vot_ok = ((vot - 79.7) / 79.7).abs() <= 0.15;
    Ok((
        acc_ok && vot_ok,
        format!(
            "test accuracy {:.2}% (target 63.7 +/- 2: {}), VOT {vot:.2} CHF/hr (target 79.7 +/- 15%: {})",
            100.0 * acc,
            if acc_ok { "ok" } else { "out of range" },
            if vot_ok { "ok" } else { "out of range" }
        ),
    ))
}

fn distillation_fixed_point(scratch: &Path) -> Outcome {
    let cfg = GeneratorConfig {
        seed: 7,
        ..Default::default()
    };
    let g = generate(&cfg)?;
    let s = splits(&g.dataset)?;
    let teacher = fit_stage1(&s.train, &s.val, &cfg.spec(), &stage1(7))?;
    let own = |ds: &Dataset, name: &str| -> Result<FmProbabilities, Error> {
        let p = scratch.join(format!("teacher_{name}.csv"));
        FmProbabilities::new(
            "teacher",
            name,
            ds.alt_set.names().to_vec(),
            ds.rows.iter().map(|r| (r.id, teacher.probabilities(r))).collect(),
        )?
        .write(&p)?;
        choice_core::load_fm_probs(&p, ds)
    };
    let (qt, qv) = (own(&s.train, "train")?, own(&s.val, "val")?);
    let student = distill_mnl(&s.train, &s.val, &qt, &qv, &cfg.spec(), &stage1(7))?;
    let labels = qt.soft_labels(&s.train)?;
    let self_entropy = cross_entropy(&teacher, &s.train, &labels);
    let gap = (cross_entropy(&student, &s.train, &labels) - self_entropy).abs();
    Ok((
        gap < 1e-6,
        format!("teacher self-entropy {self_entropy:.6}; student gap {gap:.1e} (limit 1e-6)"),
    ))
}

fn report(name: &str, started: Instant, outcome: Outcome) -> bool {
    let secs = started.elapsed().as_secs_f64();
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("{} {name} ({secs:.1}s): {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let mut all = true;

    let t = Instant::now();
    let legs = fit_legs(scratch.path());
    match &legs {
        Ok(legs) => {
            all &= report("constructive validity", t, constructive_validity(legs));
            all &= report("non-contamination", Instant::now(), non_contamination(legs));
        }
        Err(e) => {
            all &= report("constructive validity", t, Err(Error::Argument(e.to_string())));
            all &= report("non-contamination", t, Err(Error::Argument(e.to_string())));
        }
    }
    all &= report("gradient oracles", Instant::now(), gradient_oracles());
    all &= report("synthetic recovery", Instant::now(), synthetic_recovery());
    all &= report("synthetic adapter gain", Instant::now(), synthetic_gain());
    let t = Instant::now();
    let headline = match &legs {
        Ok(legs) => swissmetro_headline(legs),
        Err(e) => Err(Error::Argument(e.to_string())),
    };
    all &= report("swissmetro headline", t, headline);
    all &= report(
        "distillation fixed point",
        Instant::now(),
        distillation_fixed_point(scratch.path()),
    );

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
