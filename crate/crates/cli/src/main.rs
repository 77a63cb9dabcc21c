mod config;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use choice_core::adapter::{distill_mnl, fit_stage2, AdapterModel};
use choice_core::audit::{full_audit, AdapterPredictor, AuditConfig, AuditReport, ChoiceModel, FixedTable, Labeled};
use choice_core::data::{
    load_dataset, preprocess_swissmetro, split, subsample, write_generic, Dataset, Layout, SplitConfig, Splits,
};
use choice_core::fm_probs::FmProbabilities;
use choice_core::mnl::{fit_stage1, MnlDocument, MnlModel, UtilitySpec};
use choice_core::report::{compare_models, subsample_study, to_machine, FmSupply, PipelineConfig};
use choice_core::synthetic::{generate, make_fm_probs, GeneratorConfig};

use config::Config;
use manifest::{beside, Recorder};

/// Exit status when a model claiming constructive guarantees fails them.
const EXIT_INVALID: u8 = 3;

#[derive(Parser)]
#[command(
    name = "choice",
    version,
    about = "Sign-constrained logit, behavioral adapter and audit"
)]
struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Seed for optimizer initialisation and random draws.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Table,
    Machine,
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// swissmetro, lpmc or generic.
    #[arg(long)]
    layout: Option<String>,
    /// Name used to tag reports (defaults to the layout or file stem).
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Draw this many rows (seeded by the split seed) before splitting.
    #[arg(long)]
    subsample_n: Option<usize>,
    /// Train, validation and test fractions, e.g. 0.7,0.15,0.15.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, clean and split a dataset; writes generic-layout split files.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Stage 1: fit the sign-constrained logit.
    FitMnl {
        #[command(flatten)]
        data: DataArgs,
        /// Built-in specification name or a specification TOML file.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Stage 2: fit the correction on top of a frozen Stage-1 model.
    FitAdapter {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model_in: PathBuf,
        /// Probability files as `<split>=<path>`; train and val are required.
        #[arg(long = "fm-probs", value_name = "SPLIT=PATH")]
        fm_probs: Vec<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Fit a structural model to foundation-model soft labels.
    Distill {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        spec: Option<String>,
        #[arg(long = "fm-probs", value_name = "SPLIT=PATH")]
        fm_probs: Vec<String>,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Audit a model file, or a probability table when no model is given.
    Audit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model_in: Option<PathBuf>,
        #[arg(long = "fm-probs", value_name = "SPLIT=PATH")]
        fm_probs: Vec<String>,
        /// Split to audit.
        #[arg(long, default_value = "test")]
        split: String,
        /// Row label in comparison tables.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Combine audit reports into one comparison table.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset plus stand-in probability files per split.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        /// Informativeness of the stand-in probabilities, in [0, 1].
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long)]
        split_seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
    /// Repeat the two-stage pipeline over seeded subsamples.
    SubsampleStudy {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        spec: Option<String>,
        /// A probability file covering every row, as `all=<path>`.
        #[arg(long = "fm-probs", value_name = "SPLIT=PATH")]
        fm_probs: Vec<String>,
        /// Use synthetic stand-in probabilities at this informativeness.
        #[arg(long, conflicts_with = "fm_probs")]
        lambda: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
}

/// Data settings after merging flags, config and defaults.
#[derive(Debug, Clone, Serialize)]
struct DataSettings {
    dataset: PathBuf,
    layout: Layout,
    tag: String,
    split_seed: u64,
    subsample_n: Option<usize>,
    ratios: [f64; 3],
}

fn ratios(flag: Option<&Vec<f64>>, cfg: Option<[f64; 3]>) -> Result<[f64; 3]> {
    match flag {
        Some(v) => v
            .as_slice()
            .try_into()
            .map_err(|_| anyhow!("--ratios needs exactly three values")),
        None => Ok(cfg.unwrap_or(SplitConfig::default().ratios)),
    }
}

fn data_settings(a: &DataArgs, cfg: &Config) -> Result<DataSettings> {
    let dataset = a
        .dataset
        .clone()
        .or_else(|| cfg.data.dataset.clone())
        .ok_or_else(|| anyhow!("no dataset given (use --dataset or [data].dataset)"))?;
    let layout: Layout = a
        .layout
        .clone()
        .or_else(|| cfg.data.layout.clone())
        .unwrap_or_else(|| "generic".into())
        .parse()?;
    let tag = a
        .tag
        .clone()
        .or_else(|| cfg.data.tag.clone())
        .unwrap_or_else(|| match layout {
            Layout::Generic => dataset
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "generic".into()),
            other => other.to_string(),
        });
    Ok(DataSettings {
        dataset,
        layout,
        tag,
        split_seed: a.split_seed.or(cfg.data.split_seed).unwrap_or(0),
        subsample_n: a.subsample_n.or(cfg.data.subsample_n),
        ratios: ratios(a.ratios.as_ref(), cfg.data.ratios)?,
    })
}

fn load(d: &DataSettings) -> Result<(Dataset, Splits)> {
    let mut ds = load_dataset(&d.dataset, d.layout).with_context(|| format!("loading {}", d.dataset.display()))?;
    if d.layout == Layout::Swissmetro {
        ds = preprocess_swissmetro(&ds)?;
    }
    if let Some(n) = d.subsample_n {
        ds = subsample(&ds, n, d.split_seed)?;
    }
    let parts = split(&ds, &SplitConfig::new(d.ratios, d.split_seed)?)?;
    Ok((ds, parts))
}

fn split_named<'a>(parts: &'a Splits, name: &str) -> Result<&'a Dataset> {
    match name {
        "train" => Ok(&parts.train),
        "val" => Ok(&parts.val),
        "test" => Ok(&parts.test),
        other => bail!("unknown split `{other}` (expected train, val or test)"),
    }
}

fn resolve_spec(flag: Option<&String>, cfg: &Config, d: &DataSettings, ds: &Dataset) -> Result<UtilitySpec> {
    let name = flag.cloned().or_else(|| cfg.model.spec.clone());
    match name {
        Some(n) => match UtilitySpec::builtin(&n) {
            Some(spec) => Ok(spec),
            None => {
                let text = std::fs::read_to_string(&n).with_context(|| format!("reading specification {n}"))?;
                toml::from_str(&text).with_context(|| format!("parsing specification {n}"))
            }
        },
        None => Ok(UtilitySpec::builtin(&d.layout.to_string())
            .unwrap_or_else(|| UtilitySpec::generic(ds.alt_set.names(), vec![]))),
    }
}

fn fm_paths(items: &[String]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for item in items {
        let (split, path) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("--fm-probs expects <split>=<path>, got `{item}`"))?;
        if out.insert(split.to_string(), PathBuf::from(path)).is_some() {
            bail!("--fm-probs given twice for split `{split}`");
        }
    }
    Ok(out)
}

fn read_fm(
    paths: &BTreeMap<String, PathBuf>,
    split: &str,
    ds: &Dataset,
    rec: &mut Recorder,
) -> Result<FmProbabilities> {
    let path = paths
        .get(split)
        .ok_or_else(|| anyhow!("missing --fm-probs {split}=<path>"))?;
    rec.input(path);
    let fm = FmProbabilities::read(path, ds.alt_set.names()).with_context(|| format!("reading {}", path.display()))?;
    Ok(fm.restricted_to(ds)?)
}

fn audit_config(tag: &str, cfg: &Config) -> AuditConfig {
    let mut a = AuditConfig::for_dataset(tag);
    if let Some(v) = cfg.audit.delta_fraction {
        a.delta_fraction = v;
    }
    if let Some(v) = cfg.audit.fd_fraction {
        a.fd_fraction = v;
    }
    if cfg.audit.vot_ceiling.is_some() {
        a.vot_ceiling = cfg.audit.vot_ceiling;
    }
    a
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn finish(rec: Recorder, cli_manifest: Option<&PathBuf>, primary: &Path, settings: impl Serialize) -> Result<()> {
    let path = cli_manifest.cloned().unwrap_or_else(|| beside(primary));
    rec.write(&path, settings)
}

// Built once per run; boxing buys nothing.
#[allow(clippy::large_enum_variant)]
enum ModelFile {
    Mnl(MnlModel, String),
    Adapter(AdapterModel),
}

fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some("mnl") => {
            let doc: MnlDocument = serde_json::from_value(value)?;
            let recorded = doc.structural_checksum.clone();
            Ok(ModelFile::Mnl(MnlModel::from_document(doc)?, recorded))
        }
        Some("adapter") => Ok(ModelFile::Adapter(AdapterModel::from_document(
            serde_json::from_value(value)?,
        )?)),
        other => bail!("{}: unknown model kind {other:?}", path.display()),
    }
}

fn print_report(report: &AuditReport, format: Format) -> Result<()> {
    match format {
        Format::Table => print!("{}", compare_models(std::slice::from_ref(report))?.render()),
        Format::Machine => print!("{}", to_machine(report)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = Config::load(cli.config.as_deref())?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let manifest = cli.manifest.as_ref();
    match &cli.command {
        Command::Ingest { data, out_dir } => {
            let d = data_settings(data, &cfg)?;
            let mut rec = Recorder::new("ingest");
            rec.input(&d.dataset);
            let (ds, parts) = load(&d)?;
            std::fs::create_dir_all(out_dir)?;
            for (name, part) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
                let p = out_dir.join(format!("{name}.csv"));
                write_generic(part, &p)?;
                rec.output(&p);
                rec.output(&choice_core::data::GenericSchema::path_for(&p));
            }
            println!(
                "{}: {} rows -> train {}, val {}, test {}",
                d.tag,
                ds.len(),
                parts.train.len(),
                parts.val.len(),
                parts.test.len()
            );
            finish(rec, manifest, &out_dir.join("ingest"), &d)?;
        }
        Command::FitMnl { data, spec, model_out } => {
            let d = data_settings(data, &cfg)?;
            let mut rec = Recorder::new("fit-mnl");
            rec.input(&d.dataset);
            let (ds, parts) = load(&d)?;
            let spec = resolve_spec(spec.as_ref(), &cfg, &d, &ds)?;
            let opt = cfg.stage1(seed);
            let model = fit_stage1(&parts.train, &parts.val, &spec, &opt)?;
            model.save(model_out)?;
            rec.output(model_out);
            let r = model.report();
            println!(
                "stopped after {} iterations ({:?}); train LL/row {:.6}; val LL/row {}",
                r.iterations,
                r.stop,
                r.train_objective,
                r.val_objective.map_or("n/a".into(), |v| format!("{v:.6}"))
            );
            for c in &spec.vot_contexts {
                println!("VOT {}: {:.4} per hour", c.name, model.vot(&c.name)?);
            }
            #[derive(Serialize)]
            struct S<'a> {
                data: &'a DataSettings,
                stage1: &'a choice_core::OptimConfig,
            }
            finish(rec, manifest, model_out, S { data: &d, stage1: &opt })?;
        }
        Command::FitAdapter {
            data,
            model_in,
            fm_probs,
            hidden,
            model_out,
        } => {
            let d = data_settings(data, &cfg)?;
            let mut rec = Recorder::new("fit-adapter");
            rec.input(&d.dataset);
            rec.input(model_in);
            let (_, parts) = load(&d)?;
            let (mnl, recorded) = match read_model(model_in)? {
                ModelFile::Mnl(m, c) => (m, c),
                ModelFile::Adapter(_) => bail!("{} is already an adapter", model_in.display()),
            };
            let paths = fm_paths(fm_probs)?;
            let fm_train = read_fm(&paths, "train", &parts.train, &mut rec)?;
            let fm_val = read_fm(&paths, "val", &parts.val, &mut rec)?;
            let s2 = cfg.stage2(seed, *hidden);
            let adapter = fit_stage2(&parts.train, &parts.val, &fm_train, &fm_val, &mnl, &recorded, &s2)?;
            adapter.save(model_out)?;
            rec.output(model_out);
            let r = adapter.report();
            println!(
                "alpha {:.6}; {} iterations ({:?}); val LL/row {} (Stage 1: {})",
                r.alpha,
                r.convergence.iterations,
                r.convergence.stop,
                r.convergence.val_objective.map_or("n/a".into(), |v| format!("{v:.6}")),
                r.initial_val_objective.map_or("n/a".into(), |v| format!("{v:.6}"))
            );
            #[derive(Serialize)]
            struct S<'a> {
                data: &'a DataSettings,
                stage2: &'a choice_core::Stage2Config,
            }
            finish(rec, manifest, model_out, S { data: &d, stage2: &s2 })?;
        }
        Command::Distill {
            data,
            spec,
            fm_probs,
            model_out,
        } => {
            let d = data_settings(data, &cfg)?;
            let mut rec = Recorder::new("distill");
            rec.input(&d.dataset);
            let (ds, parts) = load(&d)?;
            let spec = resolve_spec(spec.as_ref(), &cfg, &d, &ds)?;
            let paths = fm_paths(fm_probs)?;
            let fm_train = read_fm(&paths, "train", &parts.train, &mut rec)?;
            let fm_val = read_fm(&paths, "val", &parts.val, &mut rec)?;
            let opt = cfg.stage1(seed);
            let model = distill_mnl(&parts.train, &parts.val, &fm_train, &fm_val, &spec, &opt)?;
            model.save(model_out)?;
            rec.output(model_out);
            for c in &spec.vot_contexts {
                println!("VOT {}: {:.4} per hour", c.name, model.vot(&c.name)?);
            }
            #[derive(Serialize)]
            struct S<'a> {
                data: &'a DataSettings,
                stage1: &'a choice_core::OptimConfig,
            }
            finish(rec, manifest, model_out, S { data: &d, stage1: &opt })?;
        }
        Command::Audit {
            data,
            model_in,
            fm_probs,
            split,
            label,
            report_out,
        } => {
            let d = data_settings(data, &cfg)?;
            let mut rec = Recorder::new("audit");
            rec.input(&d.dataset);
            let (_, parts) = load(&d)?;
            let target = split_named(&parts, split)?;
            let paths = fm_paths(fm_probs)?;
            let acfg = audit_config(&d.tag, &cfg);
            let model = match model_in {
                Some(p) => {
                    rec.input(p);
                    Some(read_model(p)?)
                }
                None => None,
            };
            let fm = match (&model, paths.is_empty()) {
                (Some(ModelFile::Mnl(..)), _) => None,
                (_, true) => bail!("auditing needs --model-in or --fm-probs {split}=<path>"),
                _ => Some(read_fm(&paths, split, target, &mut rec)?),
            };
            let audited: Box<dyn ChoiceModel + '_> = match (&model, &fm) {
                (Some(ModelFile::Mnl(m, _)), _) => Box::new(m.clone()),
                (Some(ModelFile::Adapter(a)), Some(fm)) => Box::new(AdapterPredictor { model: a, fm }),
                (None, Some(fm)) => Box::new(FixedTable { probs: fm }),
                _ => unreachable!("probabilities were read above"),
            };
            let audited: Box<dyn ChoiceModel + '_> = match label {
                Some(l) => Box::new(Labeled {
                    label: l.clone(),
                    model: audited.as_ref(),
                }),
                None => audited,
            };
            let report = full_audit(audited.as_ref(), target, &acfg)?;
            print_report(&report, cli.format)?;
            let primary = match report_out {
                Some(p) => {
                    write_text(p, &to_machine(&report)?)?;
                    rec.output(p);
                    p.clone()
                }
                None => PathBuf::from("audit"),
            };
            #[derive(Serialize)]
            struct S<'a> {
                data: &'a DataSettings,
                split: &'a str,
                audit: &'a AuditConfig,
            }
            if report_out.is_some() || manifest.is_some() {
                finish(
                    rec,
                    manifest,
                    &primary,
                    S {
                        data: &d,
                        split,
                        audit: &acfg,
                    },
                )?;
            }
            let failures = report.validity_failures();
            if !failures.is_empty() {
                for f in failures {
                    eprintln!("validity failure: {f}");
                }
                return Ok(ExitCode::from(EXIT_INVALID));
            }
        }
        Command::Compare { reports, report_out } => {
            let mut rec = Recorder::new("compare");
            let mut loaded = Vec::new();
            for p in reports {
                rec.input(p);
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let r: AuditReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
                loaded.push(r);
            }
            let table = compare_models(&loaded)?;
            match cli.format {
                Format::Table => print!("{}", table.render()),
                Format::Machine => print!("{}", to_machine(&table)?),
            }
            if let Some(p) = report_out {
                write_text(p, &to_machine(&table)?)?;
                rec.output(p);
                finish(rec, manifest, p, serde_json::json!({}))?;
            }
        }
        Command::Synth {
            out_dir,
            n,
            lambda,
            split_seed,
            ratios: r,
        } => {
            let mut gen = cfg.synth.clone().unwrap_or_default();
            gen.seed = seed;
            if let Some(n) = n {
                gen.n = *n;
            }
            let split_seed = split_seed.or(cfg.data.split_seed).unwrap_or(0);
            let ratios = ratios(r.as_ref(), cfg.data.ratios)?;
            let mut rec = Recorder::new("synth");
            let g = generate(&gen)?;
            std::fs::create_dir_all(out_dir)?;
            let data_path = out_dir.join("synthetic.csv");
            write_generic(&g.dataset, &data_path)?;
            rec.output(&data_path);
            rec.output(&choice_core::data::GenericSchema::path_for(&data_path));
            let parts = split(&g.dataset, &SplitConfig::new(ratios, split_seed)?)?;
            for (name, part) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
                let p = out_dir.join(format!("fm_{name}.csv"));
                make_fm_probs(part, *lambda, "synthetic", name)?.write(&p)?;
                rec.output(&p);
            }
            println!(
                "{} rows, true VOT {:.4}; probability files at informativeness {lambda}",
                g.dataset.len(),
                gen.true_vot()
            );
            #[derive(Serialize)]
            struct S<'a> {
                generator: &'a GeneratorConfig,
                lambda: f64,
                split_seed: u64,
                ratios: [f64; 3],
            }
            finish(
                rec,
                manifest,
                &out_dir.join("synth"),
                S {
                    generator: &gen,
                    lambda: *lambda,
                    split_seed,
                    ratios,
                },
            )?;
        }
        Command::SubsampleStudy {
            data,
            spec,
            fm_probs,
            lambda,
            seeds,
            report_out,
        } => {
            let d = data_settings(data, &cfg)?;
            let mut rec = Recorder::new("subsample-study");
            rec.input(&d.dataset);
            let mut ds = load_dataset(&d.dataset, d.layout)?;
            if d.layout == Layout::Swissmetro {
                ds = preprocess_swissmetro(&ds)?;
            }
            let spec = resolve_spec(spec.as_ref(), &cfg, &d, &ds)?;
            let supply = match lambda {
                Some(l) => FmSupply::Synthetic {
                    lambda: *l,
                    source_tag: "synthetic".into(),
                },
                None => FmSupply::Table(read_fm(&fm_paths(fm_probs)?, "all", &ds, &mut rec)?),
            };
            let seeds = if seeds.is_empty() { vec![seed] } else { seeds.clone() };
            let pcfg = PipelineConfig {
                spec,
                subsample_n: d.subsample_n,
                ratios: d.ratios,
                stage1: cfg.stage1(seed),
                stage2: cfg.stage2(seed, None),
                audit: audit_config(&d.tag, &cfg),
            };
            let summary = subsample_study(&ds, &supply, &pcfg, &seeds)?;
            match cli.format {
                Format::Table => print!("{}", summary.render()),
                Format::Machine => print!("{}", to_machine(&summary)?),
            }
            if let Some(p) = report_out {
                write_text(p, &to_machine(&summary)?)?;
                rec.output(p);
                #[derive(Serialize)]
                struct S<'a> {
                    data: &'a DataSettings,
                    seeds: &'a [u64],
                    pipeline: &'a PipelineConfig,
                }
                finish(
                    rec,
                    manifest,
                    p,
                    S {
                        data: &d,
                        seeds: &seeds,
                        pipeline: &pcfg,
                    },
                )?;
            }
            if !summary.valid {
                eprintln!("one or more runs failed a validity check");
                return Ok(ExitCode::from(EXIT_INVALID));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
