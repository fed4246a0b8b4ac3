use serde::{Deserialize, Serialize};

use super::{CtmcModel, DiffusionModel, ModelError};

/// JSON form of a model, tagged by `"type"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Ctmc {
        sub_generator: Vec<Vec<f64>>,
        initial_law: Vec<f64>,
    },
    PureDeath {
        rate: f64,
    },
    Diffusion(DiffusionModel),
}

/// A validated model of any supported kind.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Ctmc(CtmcModel),
    Diffusion(DiffusionModel),
}

impl ModelSpec {
    pub fn build(&self) -> Result<AnyModel, ModelError> {
        match self {
            ModelSpec::Ctmc {
                sub_generator,
                initial_law,
            } => CtmcModel::new(sub_generator.clone(), initial_law.clone()).map(AnyModel::Ctmc),
            ModelSpec::PureDeath { rate } => CtmcModel::pure_death(*rate).map(AnyModel::Ctmc),
            ModelSpec::Diffusion(d) => {
                d.validate()?;
                Ok(AnyModel::Diffusion(d.clone()))
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Invalid(e.to_string()))
    }
}

impl From<&CtmcModel> for ModelSpec {
    fn from(m: &CtmcModel) -> Self {
        ModelSpec::Ctmc {
            sub_generator: m.sub_generator().to_vec(),
            initial_law: m.initial_law().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_each_model_type() {
        let ctmc = ModelSpec::from_json(
            r#"{"type": "ctmc", "sub_generator": [[-1.5, 1.0], [1.0, -3.0]], "initial_law": [1.0, 0.0]}"#,
        )
        .unwrap();
        match ctmc.build().unwrap() {
            AnyModel::Ctmc(m) => assert_eq!(m.killing_rates(), &[0.5, 2.0]),
            _ => panic!("expected ctmc"),
        }
        let pd = ModelSpec::from_json(r#"{"type": "pure_death", "rate": 2.0}"#).unwrap();
        assert!(matches!(pd.build().unwrap(), AnyModel::Ctmc(_)));
        let diff = ModelSpec::from_json(
            r#"{"type": "diffusion",
                "drift": {"kind": "double_well"},
                "diffusion_coeff": 0.5,
                "killing": {"kind": "barrier", "lower": [-1.5], "upper": [1.5]},
                "step_size": 0.01,
                "initial_law": {"kind": "point", "x": [1.0]}}"#,
        )
        .unwrap();
        assert!(matches!(diff.build().unwrap(), AnyModel::Diffusion(_)));
    }

    #[test]
    fn rejects_invalid_documents() {
        assert!(ModelSpec::from_json(r#"{"type": "ctmc", "sub_generator": [[1.0]], "initial_law": [1.0]}"#)
            .unwrap()
            .build()
            .is_err());
        assert!(ModelSpec::from_json(r#"{"type": "teleport"}"#).is_err());
        assert!(ModelSpec::from_json(r#"{"type": "pure_death"}"#).is_err());
    }
}
