use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{AlternativeSet, Dataset, Observation, COST_ATTRIBUTE, GA_COVARIATE, TIME_ATTRIBUTE};
use crate::error::{Error, Result};

/// A coefficient forced negative through `beta = -exp(theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedCoefficient {
    pub name: String,
    pub attribute: String,
    /// Alternatives the coefficient applies to; empty means all (generic).
    #[serde(default)]
    pub alternatives: Vec<String>,
}

/// A socio covariate entering the listed alternatives' utilities linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub name: String,
    pub covariate: String,
    pub alternatives: Vec<String>,
}

/// Drops an attribute's term from the listed alternatives whenever the
/// covariate is nonzero (GA holders face no marginal cost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostExclusion {
    pub covariate: String,
    pub attribute: String,
    pub alternatives: Vec<String>,
}

/// Pair of constrained coefficients whose ratio is a value of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotContext {
    pub name: String,
    pub time: String,
    pub cost: String,
    /// Alternatives over which a finite-difference audit evaluates this VOT.
    pub alternatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub alternatives: Vec<String>,
    /// Alternatives carrying a constant; the remaining one is the reference.
    pub asc: Vec<String>,
    pub coefficients: Vec<ConstrainedCoefficient>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    #[serde(default)]
    pub cost_exclusion: Option<CostExclusion>,
    #[serde(default)]
    pub vot_contexts: Vec<VotContext>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl UtilitySpec {
    /// ASCs for train and Swissmetro (car is the reference), generic time and
    /// cost, GA holders' train/Swissmetro cost excluded.
    pub fn swissmetro() -> Self {
        Self {
            alternatives: strings(&["train", "sm", "car"]),
            asc: strings(&["train", "sm"]),
            coefficients: vec![
                ConstrainedCoefficient {
                    name: "time".into(),
                    attribute: TIME_ATTRIBUTE.into(),
                    alternatives: vec![],
                },
                ConstrainedCoefficient {
                    name: "cost".into(),
                    attribute: COST_ATTRIBUTE.into(),
                    alternatives: vec![],
                },
            ],
            interactions: vec![],
            cost_exclusion: Some(CostExclusion {
                covariate: GA_COVARIATE.into(),
                attribute: COST_ATTRIBUTE.into(),
                alternatives: strings(&["train", "sm"]),
            }),
            vot_contexts: vec![VotContext {
                name: "generic".into(),
                time: "time".into(),
                cost: "cost".into(),
                alternatives: strings(&["train", "sm", "car"]),
            }],
        }
    }

    /// ASCs for walk, cycle and public transport (drive is the reference);
    /// mode-specific time and cost for public transport and driving, one
    /// shared active-mode time coefficient; licence and car ownership shift
    /// the driving utility.
    pub fn lpmc() -> Self {
        let coef = |name: &str, attr: &str, alts: &[&str]| ConstrainedCoefficient {
            name: name.into(),
            attribute: attr.into(),
            alternatives: strings(alts),
        };
        Self {
            alternatives: strings(&["walk", "cycle", "pt", "drive"]),
            asc: strings(&["walk", "cycle", "pt"]),
            coefficients: vec![
                coef("time_active", TIME_ATTRIBUTE, &["walk", "cycle"]),
                coef("time_pt", TIME_ATTRIBUTE, &["pt"]),
                coef("time_drive", TIME_ATTRIBUTE, &["drive"]),
                coef("cost_pt", COST_ATTRIBUTE, &["pt"]),
                coef("cost_drive", COST_ATTRIBUTE, &["drive"]),
            ],
            interactions: vec![
                Interaction {
                    name: "drive_licence".into(),
                    covariate: "driving_license".into(),
                    alternatives: strings(&["drive"]),
                },
                Interaction {
                    name: "drive_cars".into(),
                    covariate: "car_ownership".into(),
                    alternatives: strings(&["drive"]),
                },
            ],
            cost_exclusion: None,
            vot_contexts: vec![
                VotContext {
                    name: "pt".into(),
                    time: "time_pt".into(),
                    cost: "cost_pt".into(),
                    alternatives: strings(&["pt"]),
                },
                VotContext {
                    name: "drive".into(),
                    time: "time_drive".into(),
                    cost: "cost_drive".into(),
                    alternatives: strings(&["drive"]),
                },
            ],
        }
    }

    /// Generic time and cost with ASCs on every alternative but the last.
    pub fn generic(alternatives: &[String], interactions: Vec<Interaction>) -> Self {
        Self {
            alternatives: alternatives.to_vec(),
            asc: alternatives[..alternatives.len() - 1].to_vec(),
            coefficients: vec![
                ConstrainedCoefficient {
                    name: "time".into(),
                    attribute: TIME_ATTRIBUTE.into(),
                    alternatives: vec![],
                },
                ConstrainedCoefficient {
                    name: "cost".into(),
                    attribute: COST_ATTRIBUTE.into(),
                    alternatives: vec![],
                },
            ],
            interactions,
            cost_exclusion: None,
            vot_contexts: vec![VotContext {
                name: "generic".into(),
                time: "time".into(),
                cost: "cost".into(),
                alternatives: alternatives.to_vec(),
            }],
        }
    }

    /// Looks up a bundled specification by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "swissmetro" => Some(Self::swissmetro()),
            "lpmc" => Some(Self::lpmc()),
            _ => None,
        }
    }

    pub fn n_params(&self) -> usize {
        self.coefficients.len() + self.asc.len() + self.interactions.len()
    }

    pub fn coefficient_index(&self, name: &str) -> Option<usize> {
        self.coefficients.iter().position(|c| c.name == name)
    }

    pub fn vot_context(&self, name: &str) -> Option<&VotContext> {
        self.vot_contexts.iter().find(|c| c.name == name)
    }

    /// Resolves names against a dataset schema.
    pub fn compile(&self, alt_set: &AlternativeSet, socio_names: &[String]) -> Result<Design> {
        if self.alternatives != alt_set.names() {
            return Err(Error::Schema(format!(
                "specification alternatives {:?} do not match dataset alternatives {:?}",
                self.alternatives,
                alt_set.names()
            )));
        }
        let k = alt_set.len();
        let alt = |name: &str| {
            alt_set
                .alternative_index(name)
                .ok_or_else(|| Error::Schema(format!("unknown alternative `{name}`")))
        };
        let alts = |names: &[String]| -> Result<Vec<usize>> {
            if names.is_empty() {
                Ok((0..k).collect())
            } else {
                names.iter().map(|n| alt(n)).collect()
            }
        };
        let socio = |name: &str| {
            socio_names
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::Schema(format!("unknown socio covariate `{name}`")))
        };

        let asc_alts = self.asc.iter().map(|n| alt(n)).collect::<Result<Vec<_>>>()?;
        if asc_alts.len() >= k || asc_alts.iter().collect::<HashSet<_>>().len() != asc_alts.len() {
            return Err(Error::Schema(
                "constants must leave exactly one reference alternative unlisted".into(),
            ));
        }
        let mut seen_names = HashSet::new();
        let mut used_cells = HashSet::new();
        let mut coefficients = Vec::with_capacity(self.coefficients.len());
        for c in &self.coefficients {
            if !seen_names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate coefficient `{}`", c.name)));
            }
            let attr = alt_set
                .attribute_index(&c.attribute)
                .ok_or_else(|| Error::Schema(format!("constrained attribute `{}` not in dataset", c.attribute)))?;
            let cells = alts(&c.alternatives)?
                .into_iter()
                .map(|a| (a, attr))
                .collect::<Vec<_>>();
            for cell in &cells {
                if !used_cells.insert(*cell) {
                    return Err(Error::Schema(format!(
                        "cell ({}, {}) is covered by more than one coefficient",
                        alt_set.names()[cell.0],
                        c.attribute
                    )));
                }
            }
            coefficients.push(cells);
        }
        let interactions = self
            .interactions
            .iter()
            .map(|i| Ok((socio(&i.covariate)?, alts(&i.alternatives)?)))
            .collect::<Result<Vec<_>>>()?;
        let exclusion = self
            .cost_exclusion
            .as_ref()
            .map(|e| -> Result<Exclusion> {
                let attr = alt_set
                    .attribute_index(&e.attribute)
                    .ok_or_else(|| Error::Schema(format!("unknown attribute `{}`", e.attribute)))?;
                let mut alts_mask = vec![false; k];
                for a in alts(&e.alternatives)? {
                    alts_mask[a] = true;
                }
                Ok(Exclusion {
                    covariate: socio(&e.covariate)?,
                    attribute: attr,
                    alternatives: alts_mask,
                })
            })
            .transpose()?;
        for ctx in &self.vot_contexts {
            for coef in [&ctx.time, &ctx.cost] {
                if self.coefficient_index(coef).is_none() {
                    return Err(Error::Schema(format!(
                        "VOT context `{}` names unknown coefficient `{coef}`",
                        ctx.name
                    )));
                }
            }
        }
        Ok(Design {
            k,
            n_attributes: alt_set.n_attributes(),
            coefficients,
            asc_alts,
            interactions,
            exclusion,
        })
    }

    pub fn compile_for(&self, ds: &Dataset) -> Result<Design> {
        self.compile(&ds.alt_set, &ds.socio_names)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Exclusion {
    covariate: usize,
    attribute: usize,
    alternatives: Vec<bool>,
}

/// A specification bound to a dataset schema. Utilities are linear in
/// `gamma = [beta..., asc..., w...]`; [`Design::features`] returns the
/// `K x P` matrix of multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    k: usize,
    n_attributes: usize,
    coefficients: Vec<Vec<(usize, usize)>>,
    asc_alts: Vec<usize>,
    interactions: Vec<(usize, Vec<usize>)>,
    exclusion: Option<Exclusion>,
}

impl Design {
    pub fn n_alternatives(&self) -> usize {
        self.k
    }

    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }

    pub fn n_params(&self) -> usize {
        self.coefficients.len() + self.asc_alts.len() + self.interactions.len()
    }

    /// True when the attribute's term is structurally absent from `alt`'s
    /// utility for this observation (either no coefficient covers the cell,
    /// or the exclusion rule fires).
    pub fn is_excluded(&self, obs: &Observation, alt: usize, attr: usize) -> bool {
        if let Some(ex) = &self.exclusion {
            if ex.attribute == attr && ex.alternatives[alt] && obs.socio[ex.covariate] != 0.0 {
                return true;
            }
        }
        !self.coefficients.iter().any(|cells| cells.contains(&(alt, attr)))
    }

    /// Row-major `K x P` feature matrix for one observation.
    pub fn features(&self, obs: &Observation) -> Vec<f64> {
        let p = self.n_params();
        let mut z = vec![0.0; self.k * p];
        for (j, cells) in self.coefficients.iter().enumerate() {
            for &(alt, attr) in cells {
                if !self.excluded_by_rule(obs, alt, attr) {
                    z[alt * p + j] = obs.attrs[alt * self.n_attributes + attr];
                }
            }
        }
        let off = self.coefficients.len();
        for (j, &alt) in self.asc_alts.iter().enumerate() {
            z[alt * p + off + j] = 1.0;
        }
        let off = off + self.asc_alts.len();
        for (j, (socio, alts)) in self.interactions.iter().enumerate() {
            for &alt in alts {
                z[alt * p + off + j] = obs.socio[*socio];
            }
        }
        z
    }

    fn excluded_by_rule(&self, obs: &Observation, alt: usize, attr: usize) -> bool {
        self.exclusion
            .as_ref()
            .is_some_and(|ex| ex.attribute == attr && ex.alternatives[alt] && obs.socio[ex.covariate] != 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::toy;

    #[test]
    fn swissmetro_spec_compiles_against_toy_schema() {
        let ds = toy(3);
        let d = UtilitySpec::swissmetro().compile_for(&ds).unwrap();
        assert_eq!(d.n_params(), 4);
        // row 1 is a GA holder: train and sm cost excluded, car cost kept.
        let ga_row = &ds.rows[1];
        assert!(d.is_excluded(ga_row, 0, 1));
        assert!(d.is_excluded(ga_row, 1, 1));
        assert!(!d.is_excluded(ga_row, 2, 1));
        assert!(!d.is_excluded(&ds.rows[0], 0, 1));
        let z = d.features(ga_row);
        // [beta_time, beta_cost, asc_train, asc_sm] per alternative
        assert_eq!(&z[0..4], &[60.0, 0.0, 1.0, 0.0]);
        assert_eq!(&z[4..8], &[40.0, 0.0, 0.0, 1.0]);
        assert_eq!(&z[8..12], &[90.0, 65.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_mismatched_alternatives_and_unknown_names() {
        let ds = toy(1);
        let mut spec = UtilitySpec::swissmetro();
        spec.alternatives.swap(0, 1);
        assert!(spec.compile_for(&ds).is_err());

        let mut spec = UtilitySpec::swissmetro();
        spec.coefficients[0].attribute = "headway".into();
        assert!(spec.compile_for(&ds).is_err());

        let mut spec = UtilitySpec::swissmetro();
        spec.asc.push("car".into());
        assert!(spec.compile_for(&ds).is_err());

        let mut spec = UtilitySpec::swissmetro();
        spec.coefficients.push(ConstrainedCoefficient {
            name: "time_car".into(),
            attribute: "time".into(),
            alternatives: vec!["car".into()],
        });
        assert!(spec.compile_for(&ds).is_err(), "overlapping cells");
    }
}
