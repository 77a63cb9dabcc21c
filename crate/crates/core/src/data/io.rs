//! The generic delimiter-separated layout.
//!
//! A data file `<stem>.csv` is accompanied by a descriptor `<stem>.schema.toml`:
//!
//! ```toml
//! delimiter = ","
//! alternatives = ["train", "sm", "car"]
//! attributes = ["time", "cost"]
//! socio = ["ga"]
//! provenance = ["..."]
//! ```
//!
//! Columns: `id`, `choice` (0-based alternative index), `avail_<alt>` (0/1),
//! `<alt>_<attr>` for every pair, then one column per socio covariate.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AlternativeSet, Dataset, Observation};
use crate::error::{Error, Result, RowError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericSchema {
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    pub alternatives: Vec<String>,
    pub attributes: Vec<String>,
    #[serde(default)]
    pub socio: Vec<String>,
    #[serde(default)]
    pub provenance: Vec<String>,
}

fn default_delimiter() -> String {
    ",".into()
}

impl GenericSchema {
    /// Descriptor path that sits next to a data file.
    pub fn path_for(data: &Path) -> PathBuf {
        let stem = data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        data.with_file_name(format!("{stem}.schema.toml"))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub(crate) fn delimiter_byte(&self) -> Result<u8> {
        delimiter_byte(&self.delimiter)
    }
}

pub(crate) fn delimiter_byte(d: &str) -> Result<u8> {
    match d {
        "\\t" | "\t" | "tab" => Ok(b'\t'),
        s if s.len() == 1 => Ok(s.as_bytes()[0]),
        other => Err(Error::Config(format!("unsupported delimiter {other:?}"))),
    }
}

pub(crate) fn parse_number(raw: &str, line: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

pub(crate) fn column_index(headers: &HashMap<String, usize>, name: &str) -> Result<usize> {
    headers
        .get(name)
        .copied()
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

/// Reads a generic-layout file; the descriptor is looked up next to it.
pub fn read_generic(path: &Path) -> Result<Dataset> {
    let schema = GenericSchema::read(&GenericSchema::path_for(path))?;
    read_generic_with(path, &schema)
}

pub(crate) fn read_generic_with(path: &Path, schema: &GenericSchema) -> Result<Dataset> {
    let alt_set = AlternativeSet::new(schema.alternatives.clone(), schema.attributes.clone())?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
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

    let k = alt_set.len();
    let id_col = column_index(&headers, "id")?;
    let choice_col = column_index(&headers, "choice")?;
    let avail_cols = alt_set
        .names()
        .iter()
        .map(|alt| column_index(&headers, &format!("avail_{alt}")))
        .collect::<Result<Vec<_>>>()?;
    let mut attr_cols = Vec::with_capacity(k * alt_set.n_attributes());
    for alt in alt_set.names() {
        for attr in alt_set.attribute_names() {
            let name = format!("{alt}_{attr}");
            attr_cols.push((column_index(&headers, &name)?, name));
        }
    }
    let socio_cols = schema
        .socio
        .iter()
        .map(|s| column_index(&headers, s).map(|c| (c, s.clone())))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut row_errors = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let id_raw = &record[id_col];
        let id: u64 = id_raw.trim().parse().map_err(|_| Error::Parse {
            line,
            column: "id".into(),
            value: id_raw.to_string(),
        })?;
        let choice_raw = &record[choice_col];
        let choice: usize = choice_raw.trim().parse().map_err(|_| Error::Parse {
            line,
            column: "choice".into(),
            value: choice_raw.to_string(),
        })?;
        let avail = avail_cols
            .iter()
            .zip(alt_set.names())
            .map(|(&c, alt)| parse_number(&record[c], line, &format!("avail_{alt}")).map(|v| v != 0.0))
            .collect::<Result<Vec<_>>>()?;
        let attrs = attr_cols
            .iter()
            .map(|(c, name)| parse_number(&record[*c], line, name))
            .collect::<Result<Vec<_>>>()?;
        let socio = socio_cols
            .iter()
            .map(|(c, name)| parse_number(&record[*c], line, name))
            .collect::<Result<Vec<_>>>()?;
        let obs = Observation {
            id,
            attrs,
            socio,
            avail,
            choice,
        };
        match obs.validate(k, alt_set.n_attributes(), schema.socio.len()) {
            Ok(()) => rows.push(obs),
            Err(message) => row_errors.push(RowError {
                line,
                id: Some(id),
                message,
            }),
        }
    }
    if !row_errors.is_empty() {
        return Err(Error::Validation(row_errors));
    }
    let mut provenance = schema.provenance.clone();
    provenance.push(format!("loaded generic layout from {}", path.display()));
    Dataset::new(alt_set, schema.socio.clone(), rows, provenance)
}

/// Writes the data file and its descriptor. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_generic(ds: &Dataset, path: &Path) -> Result<()> {
    let schema = GenericSchema {
        delimiter: ",".into(),
        alternatives: ds.alt_set.names().to_vec(),
        attributes: ds.alt_set.attribute_names().to_vec(),
        socio: ds.socio_names.clone(),
        provenance: ds.provenance.clone(),
    };
    let schema_path = GenericSchema::path_for(path);
    let text = toml::to_string(&schema).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&schema_path, text).map_err(|e| Error::io(&schema_path, e))?;

    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "choice".to_string()];
    header.extend(ds.alt_set.names().iter().map(|a| format!("avail_{a}")));
    for alt in ds.alt_set.names() {
        for attr in ds.alt_set.attribute_names() {
            header.push(format!("{alt}_{attr}"));
        }
    }
    header.extend(ds.socio_names.iter().cloned());
    writer.write_record(&header)?;
    for row in &ds.rows {
        let mut rec = vec![row.id.to_string(), row.choice.to_string()];
        rec.extend(row.avail.iter().map(|&a| if a { "1" } else { "0" }.to_string()));
        rec.extend(row.attrs.iter().map(f64::to_string));
        rec.extend(row.socio.iter().map(f64::to_string));
        writer.write_record(&rec)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const SCHEMA: &str = "alternatives = [\"a\", \"b\"]\nattributes = [\"time\", \"cost\"]\nsocio = [\"inc\"]\n";

    #[test]
    fn missing_column_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.schema.toml", SCHEMA);
        let p = write(
            dir.path(),
            "d.csv",
            "id,choice,avail_a,avail_b,a_time,a_cost,b_time,inc\n",
        );
        let err = read_generic(&p).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("b_cost")), "{err}");
    }

    #[test]
    fn non_numeric_attribute_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.schema.toml", SCHEMA);
        let p = write(
            dir.path(),
            "d.csv",
            "id,choice,avail_a,avail_b,a_time,a_cost,b_time,b_cost,inc\n1,0,1,1,10,x,3,4,1\n",
        );
        match read_generic(&p).unwrap_err() {
            Error::Parse { line, column, value } => {
                assert_eq!((line, column.as_str(), value.as_str()), (2, "a_cost", "x"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn chosen_but_unavailable_row_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.schema.toml", SCHEMA);
        let p = write(
            dir.path(),
            "d.csv",
            "id,choice,avail_a,avail_b,a_time,a_cost,b_time,b_cost,inc\n7,0,1,1,1,2,3,4,0\n8,1,1,0,1,2,3,4,0\n",
        );
        match read_generic(&p).unwrap_err() {
            Error::Validation(rows) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].id, Some(8));
                assert_eq!(rows[0].line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_file_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.schema.toml", SCHEMA);
        let p = write(
            dir.path(),
            "d.csv",
            "id,choice,avail_a,avail_b,a_time,a_cost,b_time,b_cost,inc\n",
        );
        let ds = read_generic(&p).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.n_alternatives(), 2);
    }
}
