//! Scenario configuration schema (JSON).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::engine::{SystemSpec, TorusField};
use crate::error::LabError;

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

/// A flow or action, as written in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemDescription {
    TorusTranslationFlow {
        velocity: Vec<f64>,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        time_scale: f64,
    },
    TorusLinearOdeFlow {
        velocity: Vec<f64>,
        modulation: f64,
        step: f64,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        time_scale: f64,
    },
    SuspensionFlow {
        matrix: [[i64; 2]; 2],
        roof: f64,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        time_scale: f64,
    },
    SuspensionHorocycleFlow {
        matrix: [[i64; 2]; 2],
        roof: f64,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        time_scale: f64,
    },
    DisjointUnion {
        components: Vec<SystemDescription>,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        time_scale: f64,
    },
    /// `directions` lists the columns of `V`.
    TorusTranslationAction {
        directions: Vec<Vec<f64>>,
        #[serde(default = "one", skip_serializing_if = "is_one")]
        time_scale: f64,
    },
}

impl SystemDescription {
    pub fn build(&self) -> Result<SystemSpec, LabError> {
        let (spec, scale) = match self {
            Self::TorusTranslationFlow {
                velocity,
                time_scale,
            } => (
                SystemSpec::torus_translation_flow(velocity.clone())?,
                *time_scale,
            ),
            Self::TorusLinearOdeFlow {
                velocity,
                modulation,
                step,
                time_scale,
            } => {
                let field = TorusField {
                    velocity: velocity.clone(),
                    modulation: *modulation,
                };
                (SystemSpec::torus_ode_flow(field, *step)?, *time_scale)
            }
            Self::SuspensionFlow {
                matrix,
                roof,
                time_scale,
            } => (SystemSpec::suspension_flow(*matrix, *roof)?, *time_scale),
            Self::SuspensionHorocycleFlow {
                matrix,
                roof,
                time_scale,
            } => (
                SystemSpec::suspension_horocycle_flow(*matrix, *roof)?,
                *time_scale,
            ),
            Self::DisjointUnion {
                components,
                time_scale,
            } => {
                let parts = components
                    .iter()
                    .map(|c| c.build())
                    .collect::<Result<_, _>>()?;
                (SystemSpec::disjoint_union(parts)?, *time_scale)
            }
            Self::TorusTranslationAction {
                directions,
                time_scale,
            } => {
                let dim = directions.first().map_or(0, |c| c.len());
                if directions.iter().any(|c| c.len() != dim) {
                    return Err(LabError::InvalidSystem(
                        "direction columns differ in length".into(),
                    ));
                }
                let flat: Vec<f64> = directions.iter().flatten().copied().collect();
                let v = DMatrix::from_column_slice(dim, directions.len(), &flat);
                (SystemSpec::torus_translation_action(v)?, *time_scale)
            }
        };
        if scale == 1.0 {
            Ok(spec)
        } else {
            spec.with_time_scale(scale)
        }
    }
}

/// The commuting candidate, relative to `phi` where useful.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiDescription {
    /// `psi_t = phi_{factor t}`.
    TimeScale {
        factor: f64,
    },
    /// `Psi_v = Phi_{B v}`, `matrix` row-major.
    ActionMatrix {
        matrix: Vec<Vec<f64>>,
    },
    System {
        system: SystemDescription,
    },
}

impl PsiDescription {
    pub fn build(&self, phi: &SystemSpec) -> Result<SystemSpec, LabError> {
        match self {
            Self::TimeScale { factor } => phi.clone().with_time_scale(*factor),
            Self::ActionMatrix { matrix } => {
                let d = matrix.len();
                if matrix.iter().any(|r| r.len() != d) {
                    return Err(LabError::InvalidArgument(
                        "action matrix must be square".into(),
                    ));
                }
                let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                phi.with_action_matrix(&DMatrix::from_row_slice(d, d, &flat))
            }
            Self::System { system } => system.build(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizons {
    #[serde(default = "Horizons::default_separation")]
    pub separation: f64,
    #[serde(default = "Horizons::default_quasitrivial")]
    pub quasitrivial: f64,
}

impl Horizons {
    fn default_separation() -> f64 {
        30.0
    }

    fn default_quasitrivial() -> f64 {
        20.0
    }
}

impl Default for Horizons {
    fn default() -> Self {
        Self {
            separation: Self::default_separation(),
            quasitrivial: Self::default_quasitrivial(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleCounts {
    /// Audit points for the local constants.
    pub calibration: usize,
    /// Points at which `A` is recovered (flows) or charts are built (actions).
    pub points: usize,
    pub pairs: usize,
    pub cocycle: usize,
    pub sections: usize,
    pub solves_per_section: usize,
    pub commutation: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self {
            calibration: 48,
            points: 200,
            pairs: 500,
            cocycle: 500,
            sections: 50,
            solves_per_section: 20,
            commutation: 100,
        }
    }
}

impl SampleCounts {
    pub fn uniform(n: usize) -> Self {
        Self {
            calibration: n,
            points: n,
            pairs: n,
            cocycle: n,
            sections: n,
            solves_per_section: n,
            commutation: n,
        }
    }
}

/// Known outcomes to audit against. Absent fields are reported but not
/// audited.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Expectations {
    /// `true`: separated fraction must reach 0.99; `false`: must be 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separating: Option<bool>,
    /// Expected `A` on each component of a flow.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_values: Option<Vec<f64>>,
    /// Expected row-major matrix `A` of an action.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
}

pub const TOLERANCE_DEFAULTS: [(&str, f64); 7] = [
    ("a_error", 1e-6),
    ("a_invariance", 1e-6),
    ("basis_check", 1e-6),
    ("cocycle", 1e-6),
    ("commutation", 1e-9),
    ("level_set", 1e-9),
    ("quasitrivial", 1e-7),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub description: Option<String>,
    pub phi: SystemDescription,
    /// Absent means `psi = phi`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psi: Option<PsiDescription>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub horizons: Horizons,
    #[serde(default)]
    pub samples: SampleCounts,
    pub seed: u64,
    #[serde(default)]
    pub expect: Expectations,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("schema error: {0}")]
pub struct SchemaError(pub String);

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let config: Self = serde_json::from_str(text).map_err(|e| SchemaError(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(SchemaError(format!(
                "name: {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.name
            )));
        }
        for (key, value) in &self.tolerances {
            if !TOLERANCE_DEFAULTS.iter().any(|(k, _)| k == key) {
                return Err(SchemaError(format!("tolerances.{key}: unknown tolerance")));
            }
            if !(value.is_finite() && *value > 0.0) {
                return Err(SchemaError(format!(
                    "tolerances.{key}: must be positive, got {value}"
                )));
            }
        }
        for (field, value) in [
            ("horizons.separation", self.horizons.separation),
            ("horizons.quasitrivial", self.horizons.quasitrivial),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(SchemaError(format!(
                    "{field}: must be positive, got {value}"
                )));
            }
        }
        let s = &self.samples;
        for (field, value) in [
            ("samples.calibration", s.calibration),
            ("samples.points", s.points),
            ("samples.pairs", s.pairs),
            ("samples.cocycle", s.cocycle),
            ("samples.sections", s.sections),
            ("samples.solves_per_section", s.solves_per_section),
            ("samples.commutation", s.commutation),
        ] {
            if value == 0 {
                return Err(SchemaError(format!("{field}: must be at least 1")));
            }
        }
        Ok(())
    }

    /// The configured tolerance, or its default.
    pub fn tolerance(&self, key: &str) -> f64 {
        self.tolerances.get(key).copied().unwrap_or_else(|| {
            TOLERANCE_DEFAULTS
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("no default for tolerance {key}"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "demo",
        "phi": {"kind": "suspension_flow", "matrix": [[2, 1], [1, 1]], "roof": 1.0},
        "psi": {"kind": "time_scale", "factor": 2.0},
        "seed": 3
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.samples, SampleCounts::default());
        assert_eq!(c.tolerance("quasitrivial"), 1e-7);
        let phi = c.phi.build().unwrap();
        let psi = c.psi.as_ref().unwrap().build(&phi).unwrap();
        assert_eq!(psi.time_scale(), 2.0);
    }

    #[test]
    fn missing_seed_is_a_schema_error() {
        let text = MINIMAL.replace(",\n        \"seed\": 3", "");
        let err = ScenarioConfig::from_json(&text).unwrap_err();
        assert!(err.0.contains("seed"), "{err}");
        assert!(err.0.contains("line"), "{err}");
    }

    #[test]
    fn unknown_fields_and_bad_tolerances_are_rejected() {
        let text = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"colour\": 1");
        assert!(ScenarioConfig::from_json(&text).is_err());
        let text = MINIMAL.replace(
            "\"seed\": 3",
            "\"seed\": 3, \"tolerances\": {\"cocycle\": -1}",
        );
        assert!(ScenarioConfig::from_json(&text).is_err());
        let text = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"tolerances\": {\"typo\": 1}");
        assert!(ScenarioConfig::from_json(&text).is_err());
    }

    #[test]
    fn round_trip() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), c);
    }
}
