//! Physically grounded benchmark families.

mod arm;
mod nvdex;

pub use arm::{arm_input_coupling, arm_orthogonal_field, build_arm, ArmParams};
pub use nvdex::{
    build_nvdex, linearization_at_origin, nvdex_input_coupling, nvdex_orthogonal_field, tune_instability,
    InstabilityTuning, NvdexBuild, NvdexParams, MAX_R_HALVINGS,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qg::QgInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Arm,
    Nvdex,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Arm => "arm",
            Family::Nvdex => "nvdex",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arm" | "converse_arm" | "conversearm" => Ok(Family::Arm),
            "nvdex" => Ok(Family::Nvdex),
            other => Err(Error::InvalidParameter(format!("unknown family {other:?}"))),
        }
    }
}

/// Full parameter tuple ψ of one family member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyParams {
    Arm(ArmParams),
    Nvdex(NvdexParams),
}

/// A built family member plus construction metadata.
#[derive(Debug, Clone)]
pub struct BuiltInstance {
    pub instance: QgInstance,
    pub tuning: Option<InstabilityTuning>,
}

impl FamilyParams {
    pub fn family(&self) -> Family {
        match self {
            FamilyParams::Arm(_) => Family::Arm,
            FamilyParams::Nvdex(_) => Family::Nvdex,
        }
    }

    pub fn build(&self) -> Result<BuiltInstance> {
        match self {
            FamilyParams::Arm(p) => Ok(BuiltInstance {
                instance: build_arm(p)?,
                tuning: None,
            }),
            FamilyParams::Nvdex(p) => {
                let built = build_nvdex(p)?;
                Ok(BuiltInstance {
                    instance: built.instance,
                    tuning: built.tuning,
                })
            }
        }
    }

    pub fn difficulty(&self, weights: &DifficultyWeights) -> f64 {
        match self {
            FamilyParams::Arm(p) => difficulty_index(p, weights),
            FamilyParams::Nvdex(p) => nvdex_difficulty_index(p, weights),
        }
    }
}

/// Weights λ₁…λ₅ of the difficulty index; all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyWeights(pub [f64; 5]);

impl Default for DifficultyWeights {
    fn default() -> Self {
        DifficultyWeights([1.0; 5])
    }
}

impl DifficultyWeights {
    pub fn new(weights: [f64; 5]) -> Result<Self> {
        if weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            Ok(DifficultyWeights(weights))
        } else {
            Err(Error::InvalidParameter("difficulty weights must be positive".into()))
        }
    }
}

fn weighted(weights: &DifficultyWeights, terms: [f64; 5]) -> f64 {
    weights.0.iter().zip(terms).map(|(w, t)| w * t).sum()
}

/// `D = λ₁n + λ₂p⁻² + λ₃tr(Σ) + λ₄α₀ + λ₅κ(P)`.
pub fn difficulty_index(params: &ArmParams, weights: &DifficultyWeights) -> f64 {
    weighted(
        weights,
        [
            params.n_joints as f64,
            params.strength.powi(-2),
            params.noise_cov.trace(),
            params.alpha0,
            params.value_form.condition_number(),
        ],
    )
}

/// Same shape as [`difficulty_index`] with the module count in place of
/// the joint count and `α` in place of `α₀`.
pub fn nvdex_difficulty_index(params: &NvdexParams, weights: &DifficultyWeights) -> f64 {
    weighted(
        weights,
        [
            params.modules as f64,
            params.strength.powi(-2),
            params.noise_cov.trace(),
            params.alpha,
            params.value_form.condition_number(),
        ],
    )
}
