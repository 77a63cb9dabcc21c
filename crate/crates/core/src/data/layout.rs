//! Source-file layouts mapped onto the internal dataset model.
//!
//! Swissmetro and LPMC column names live in TOML mapping files (see
//! `layouts/` in this crate) so that column-name drift is fixed by editing
//! the mapping, not the code.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::io::{column_index, delimiter_byte, parse_number, read_generic};
use super::{AlternativeSet, Dataset, Observation};
use crate::error::{Error, Result, RowError};

const SWISSMETRO_MAPPING: &str = include_str!("../../layouts/swissmetro.toml");
const LPMC_MAPPING: &str = include_str!("../../layouts/lpmc.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Swissmetro,
    Lpmc,
    Generic,
}

impl Layout {
    /// The mapping shipped with the crate, for the non-generic layouts.
    pub fn builtin_mapping(self) -> Option<LayoutConfig> {
        let text = match self {
            Layout::Swissmetro => SWISSMETRO_MAPPING,
            Layout::Lpmc => LPMC_MAPPING,
            Layout::Generic => return None,
        };
        Some(LayoutConfig::from_toml(text).expect("bundled layout mapping parses"))
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "swissmetro" => Ok(Layout::Swissmetro),
            "lpmc" => Ok(Layout::Lpmc),
            "generic" => Ok(Layout::Generic),
            other => Err(Error::Argument(format!("unknown layout `{other}`"))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Swissmetro => "swissmetro",
            Layout::Lpmc => "lpmc",
            Layout::Generic => "generic",
        })
    }
}

/// Where a value comes from in the source row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Column(String),
    Constant(f64),
    Sum {
        columns: Vec<String>,
        #[serde(default = "unit_scale")]
        scale: f64,
    },
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvalidRows {
    /// Drop and count rows with an unknown choice code or an unavailable choice.
    Drop,
    #[default]
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceMapping {
    pub column: String,
    /// Source code for each alternative, in alternative order.
    pub codes: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    pub name: String,
    pub delimiter: String,
    pub alternatives: Vec<String>,
    pub attribute_names: Vec<String>,
    #[serde(default)]
    pub invalid_rows: InvalidRows,
    #[serde(default)]
    pub id_column: Option<String>,
    pub choice: ChoiceMapping,
    pub availability: IndexMap<String, Source>,
    pub attributes: IndexMap<String, IndexMap<String, Source>>,
    #[serde(default)]
    pub socio: IndexMap<String, Source>,
}

impl LayoutConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: LayoutConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.choice.codes.len() != cfg.alternatives.len() {
            return Err(Error::Config(format!(
                "{} choice codes for {} alternatives",
                cfg.choice.codes.len(),
                cfg.alternatives.len()
            )));
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// Row accounting for a mapped load.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub rows_read: usize,
    pub kept: usize,
    pub dropped_unknown_choice: usize,
    pub dropped_unavailable_choice: usize,
}

enum Resolved {
    Column(usize, String),
    Constant(f64),
    Sum(Vec<(usize, String)>, f64),
}

impl Resolved {
    fn new(src: &Source, headers: &HashMap<String, usize>) -> Result<Self> {
        Ok(match src {
            Source::Column(name) => Resolved::Column(column_index(headers, name)?, name.clone()),
            Source::Constant(v) => Resolved::Constant(*v),
            Source::Sum { columns, scale } => Resolved::Sum(
                columns
                    .iter()
                    .map(|c| column_index(headers, c).map(|i| (i, c.clone())))
                    .collect::<Result<_>>()?,
                *scale,
            ),
        })
    }

    fn eval(&self, record: &csv::StringRecord, line: usize) -> Result<f64> {
        match self {
            Resolved::Column(i, name) => parse_number(&record[*i], line, name),
            Resolved::Constant(v) => Ok(*v),
            Resolved::Sum(cols, scale) => {
                let mut total = 0.0;
                for (i, name) in cols {
                    total += parse_number(&record[*i], line, name)?;
                }
                Ok(scale * total)
            }
        }
    }
}

/// Loads a dataset in any of the supported layouts using the bundled mapping.
pub fn load_dataset(path: &Path, layout: Layout) -> Result<Dataset> {
    match layout.builtin_mapping() {
        None => read_generic(path),
        Some(cfg) => load_with_layout(path, &cfg).map(|(ds, _)| ds),
    }
}

/// Loads a source file through an explicit column mapping.
pub fn load_with_layout(path: &Path, cfg: &LayoutConfig) -> Result<(Dataset, LoadSummary)> {
    let alt_set = AlternativeSet::new(cfg.alternatives.clone(), cfg.attribute_names.clone())?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_byte(&cfg.delimiter)?)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;
    let headers: HashMap<String, usize> = reader
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();

    let id_col = cfg
        .id_column
        .as_deref()
        .filter(|c| !c.is_empty())
        .map(|c| column_index(&headers, c))
        .transpose()?;
    let choice_col = column_index(&headers, &cfg.choice.column)?;
    let avail = alt_set
        .names()
        .iter()
        .map(|alt| {
            let src = cfg
                .availability
                .get(alt)
                .ok_or_else(|| Error::Config(format!("no availability mapping for `{alt}`")))?;
            Resolved::new(src, &headers)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut attrs = Vec::new();
    for alt in alt_set.names() {
        let table = cfg
            .attributes
            .get(alt)
            .ok_or_else(|| Error::Config(format!("no attribute mapping for `{alt}`")))?;
        for attr in alt_set.attribute_names() {
            let src = table
                .get(attr)
                .ok_or_else(|| Error::Config(format!("no mapping for `{alt}.{attr}`")))?;
            attrs.push(Resolved::new(src, &headers)?);
        }
    }
    let socio_names: Vec<String> = cfg.socio.keys().cloned().collect();
    let socio = cfg
        .socio
        .values()
        .map(|src| Resolved::new(src, &headers))
        .collect::<Result<Vec<_>>>()?;

    let mut summary = LoadSummary::default();
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        summary.rows_read += 1;
        let id = match id_col {
            Some(c) => record[c].trim().parse::<u64>().map_err(|_| Error::Parse {
                line,
                column: cfg.id_column.clone().unwrap_or_default(),
                value: record[c].to_string(),
            })?,
            None => (i + 1) as u64,
        };
        let code = parse_number(&record[choice_col], line, &cfg.choice.column)?;
        let choice = cfg.choice.codes.iter().position(|&c| c as f64 == code);
        let avail = avail
            .iter()
            .map(|r| r.eval(&record, line).map(|v| v != 0.0))
            .collect::<Result<Vec<_>>>()?;
        let attrs = attrs
            .iter()
            .map(|r| r.eval(&record, line))
            .collect::<Result<Vec<_>>>()?;
        let socio = socio
            .iter()
            .map(|r| r.eval(&record, line))
            .collect::<Result<Vec<_>>>()?;

        let Some(choice) = choice else {
            summary.dropped_unknown_choice += 1;
            rejected.push(RowError {
                line,
                id: Some(id),
                message: format!("unknown choice code {code}"),
            });
            continue;
        };
        let obs = Observation {
            id,
            attrs,
            socio,
            avail,
            choice,
        };
        match obs.validate(alt_set.len(), alt_set.n_attributes(), socio_names.len()) {
            Ok(()) => rows.push(obs),
            Err(message) => {
                summary.dropped_unavailable_choice += 1;
                rejected.push(RowError {
                    line,
                    id: Some(id),
                    message,
                });
            }
        }
    }
    if cfg.invalid_rows == InvalidRows::Error && !rejected.is_empty() {
        return Err(Error::Validation(rejected));
    }
    summary.kept = rows.len();
    let provenance = vec![format!(
        "loaded {} layout from {}: read {}, kept {}, dropped {} unknown-choice, {} invalid",
        cfg.name,
        path.display(),
        summary.rows_read,
        summary.kept,
        summary.dropped_unknown_choice,
        summary.dropped_unavailable_choice
    )];
    let ds = Dataset::new(alt_set, socio_names, rows, provenance)?;
    Ok((ds, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_mappings_parse() {
        let sm = Layout::Swissmetro.builtin_mapping().unwrap();
        assert_eq!(sm.alternatives, ["train", "sm", "car"]);
        assert_eq!(sm.invalid_rows, InvalidRows::Drop);
        let lpmc = Layout::Lpmc.builtin_mapping().unwrap();
        assert_eq!(lpmc.alternatives.len(), 4);
        assert!(matches!(lpmc.attributes["pt"]["time"], Source::Sum { scale, .. } if scale == 60.0));
        assert_eq!(lpmc.attributes["walk"]["cost"], Source::Constant(0.0));
        assert!(Layout::Generic.builtin_mapping().is_none());
    }

    #[test]
    fn swissmetro_drops_unknown_choice() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sm.dat");
        let header = "GA\tAGE\tMALE\tINCOME\tFIRST\tLUGGAGE\tPURPOSE\tTRAIN_AV\tCAR_AV\tSM_AV\tTRAIN_TT\tTRAIN_CO\tTRAIN_HE\tSM_TT\tSM_CO\tSM_HE\tCAR_TT\tCAR_CO\tCHOICE";
        let rows = [
            "0\t3\t0\t2\t0\t0\t1\t1\t1\t1\t112\t48\t120\t63\t52\t20\t117\t65\t2",
            "1\t3\t0\t2\t0\t0\t1\t1\t1\t1\t103\t48\t30\t60\t49\t10\t117\t84\t0",
            "0\t3\t0\t2\t0\t0\t1\t1\t0\t1\t130\t48\t60\t67\t58\t30\t117\t52\t3",
            "1\t3\t0\t2\t0\t0\t1\t1\t1\t1\t103\t48\t30\t60\t49\t10\t117\t84\t1",
        ];
        fs::write(&p, format!("{header}\n{}\n", rows.join("\n"))).unwrap();
        let (ds, summary) = load_with_layout(&p, &Layout::Swissmetro.builtin_mapping().unwrap()).unwrap();
        assert_eq!(summary.rows_read, 4);
        assert_eq!(summary.dropped_unknown_choice, 1);
        assert_eq!(summary.dropped_unavailable_choice, 1);
        assert_eq!(ds.ids(), vec![1, 4]);
        assert_eq!(ds.rows[0].choice, 1);
        assert_eq!(ds.rows[0].attr(0, 1), 48.0);
        assert_eq!(ds.rows[1].socio[0], 1.0);
    }

    #[test]
    fn lpmc_scales_hours_to_minutes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lpmc.dat");
        let header = "trip_id\ttravel_mode\tage\tfemale\tdriving_license\tcar_ownership\tdistance\tdur_walking\tdur_cycling\tdur_pt_access\tdur_pt_rail\tdur_pt_bus\tdur_pt_int\tdur_driving\tcost_transit\tcost_driving_fuel\tcost_driving_ccharge";
        let row = "17\t3\t40\t1\t1\t1\t5000\t1.0\t0.5\t0.1\t0.2\t0.0\t0.05\t0.25\t2.4\t1.1\t0.0";
        fs::write(&p, format!("{header}\n{row}\n")).unwrap();
        let ds = load_dataset(&p, Layout::Lpmc).unwrap();
        let r = &ds.rows[0];
        assert_eq!(r.id, 17);
        assert_eq!(r.choice, 2);
        assert!((r.attr(2, 0) - 21.0).abs() < 1e-12);
        assert_eq!(r.attr(0, 1), 0.0);
        assert!((r.attr(3, 1) - 1.1).abs() < 1e-12);
        assert!(r.avail.iter().all(|&a| a));
    }
}
