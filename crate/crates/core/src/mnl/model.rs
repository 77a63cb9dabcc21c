use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    log_softmax_masked, softmax_masked, structural_utility, vot_analytic, ConvergenceReport, Design, StructuralParams,
    UtilitySpec,
};
use crate::data::{Observation, Schema};
use crate::error::{Error, Result};

pub const MNL_FORMAT_VERSION: u32 = 1;

/// A fitted structural model bound to the schema it was estimated on.
#[derive(Debug, Clone)]
pub struct MnlModel {
    spec: UtilitySpec,
    schema: Schema,
    design: Design,
    params: StructuralParams,
    report: ConvergenceReport,
}

impl MnlModel {
    pub fn new(spec: UtilitySpec, schema: Schema, params: StructuralParams, report: ConvergenceReport) -> Result<Self> {
        let design = spec.compile(&schema.alt_set()?, &schema.socio)?;
        if params.to_vector().len() != spec.n_params()
            || params.theta.len() != spec.coefficients.len()
            || params.asc.len() != spec.asc.len()
        {
            return Err(Error::Argument(
                "parameter blocks do not match the specification".into(),
            ));
        }
        Ok(Self {
            spec,
            schema,
            design,
            params,
            report,
        })
    }

    pub fn spec(&self) -> &UtilitySpec {
        &self.spec
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn params(&self) -> &StructuralParams {
        &self.params
    }

    pub fn report(&self) -> &ConvergenceReport {
        &self.report
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn vot(&self, context: &str) -> Result<f64> {
        vot_analytic(&self.params, &self.spec, context)
    }

    pub fn utilities(&self, obs: &Observation) -> Vec<f64> {
        structural_utility(&self.params, &self.design, obs)
    }

    pub fn probabilities(&self, obs: &Observation) -> Vec<f64> {
        softmax_masked(&self.utilities(obs), &obs.avail)
    }

    pub fn log_probabilities(&self, obs: &Observation) -> Vec<f64> {
        log_softmax_masked(&self.utilities(obs), &obs.avail)
    }

    pub fn to_document(&self) -> MnlDocument {
        let named = |names: Vec<&String>, values: &[f64]| -> IndexMap<String, f64> {
            names.into_iter().cloned().zip(values.iter().copied()).collect()
        };
        MnlDocument {
            format_version: MNL_FORMAT_VERSION,
            kind: "mnl".into(),
            schema: self.schema.clone(),
            spec: self.spec.clone(),
            theta: named(
                self.spec.coefficients.iter().map(|c| &c.name).collect(),
                &self.params.theta,
            ),
            asc: named(self.spec.asc.iter().collect(), &self.params.asc),
            w_inter: named(
                self.spec.interactions.iter().map(|i| &i.name).collect(),
                &self.params.w_inter,
            ),
            structural_checksum: self.checksum(),
            convergence: self.report.clone(),
        }
    }

    /// Rebuilds the model and verifies the stored checksum against the
    /// stored raw parameters.
    pub fn from_document(doc: MnlDocument) -> Result<Self> {
        if doc.kind != "mnl" {
            return Err(Error::Format(format!("expected an mnl document, found `{}`", doc.kind)));
        }
        if doc.format_version != MNL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported mnl format version {}",
                doc.format_version
            )));
        }
        let pick = |map: &IndexMap<String, f64>, names: Vec<&String>, what: &str| -> Result<Vec<f64>> {
            if map.len() != names.len() {
                return Err(Error::Format(format!(
                    "{what}: expected {} values, found {}",
                    names.len(),
                    map.len()
                )));
            }
            names
                .into_iter()
                .map(|n| {
                    map.get(n)
                        .copied()
                        .ok_or_else(|| Error::Format(format!("{what}: missing `{n}`")))
                })
                .collect()
        };
        let params = StructuralParams {
            theta: pick(
                &doc.theta,
                doc.spec.coefficients.iter().map(|c| &c.name).collect(),
                "theta",
            )?,
            asc: pick(&doc.asc, doc.spec.asc.iter().collect(), "asc")?,
            w_inter: pick(
                &doc.w_inter,
                doc.spec.interactions.iter().map(|i| &i.name).collect(),
                "w_inter",
            )?,
        };
        let found = params.checksum();
        if found != doc.structural_checksum {
            return Err(Error::Checksum {
                expected: doc.structural_checksum,
                found,
            });
        }
        Self::new(doc.spec, doc.schema, params, doc.convergence)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document())?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_document(serde_json::from_str(&text)?)
    }
}

/// On-disk form of an [`MnlModel`]. Only raw `theta` is stored; effective
/// coefficients are derived on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnlDocument {
    pub format_version: u32,
    pub kind: String,
    pub schema: Schema,
    pub spec: UtilitySpec,
    pub theta: IndexMap<String, f64>,
    pub asc: IndexMap<String, f64>,
    pub w_inter: IndexMap<String, f64>,
    pub structural_checksum: String,
    pub convergence: ConvergenceReport,
}
