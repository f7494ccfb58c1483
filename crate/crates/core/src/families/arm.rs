//! Serial n-link planar arm.
//!
//! State `[θ₁, ω₁, …, θ_n, ω_n]`, one torque per joint entering the velocity
//! row through `cos θ_i`. The drift is metric-normalized with a Givens field
//! whose angles mimic Coriolis-like (`tanh(κ₁θω)`), gravity-like (`sin θ`)
//! and neighbour-coupling (`tanh(κ₂(θ_{i+1} − θ_i))`) effects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::qg::{AngleRule, DriftRecipe, InputCoupling, OrthogonalField, PlaneRotation, QgInstance, QgParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub n_joints: usize,
    /// Control strength `p ∈ (0, 1]`.
    pub strength: f64,
    pub gamma: f64,
    pub state_cost: SymMatrix,
    pub control_cost: SymMatrix,
    pub value_form: SymMatrix,
    pub noise_cov: SymMatrix,
    pub alpha0: f64,
    pub beta0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub g0: f64,
    pub tau: f64,
}

impl ArmParams {
    pub fn state_dim(&self) -> usize {
        2 * self.n_joints
    }

    fn check(&self) -> Result<()> {
        if self.n_joints == 0 {
            return Err(Error::InvalidParameter("arm needs at least one joint".into()));
        }
        let gains = [self.alpha0, self.beta0, self.kappa1, self.kappa2, self.g0];
        if gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("arm gains"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        let n = self.state_dim();
        for (what, m, expected) in [
            ("Q", &self.state_cost, n),
            ("P", &self.value_form, n),
            ("Σ", &self.noise_cov, n),
            ("R", &self.control_cost, self.n_joints),
        ] {
            if m.dim() != expected {
                return Err(Error::InvalidParameter(format!(
                    "arm {what} has dimension {}, expected {expected}",
                    m.dim()
                )));
            }
        }
        Ok(())
    }
}

pub fn arm_input_coupling(n_joints: usize) -> InputCoupling {
    InputCoupling::ArmCosine { n_joints }
}

/// `S_p(s) = [∏_{i<n} G(ω_i, ω_{i+1}; β_i)] · [∏_{i≤n} G(θ_i, ω_i; α_i)]`.
pub fn arm_orthogonal_field(params: &ArmParams) -> OrthogonalField {
    let n = params.n_joints;
    let theta = |i: usize| 2 * i;
    let omega = |i: usize| 2 * i + 1;
    let neighbours = (0..n.saturating_sub(1)).map(|i| PlaneRotation {
        name: format!("beta_{}", i + 1),
        axis_i: omega(i),
        axis_j: omega(i + 1),
        angle: AngleRule::ArmNeighbor {
            theta: theta(i),
            theta_next: theta(i + 1),
            gain: params.beta0,
            kappa: params.kappa2,
        },
    });
    let joints = (0..n).map(|i| PlaneRotation {
        name: format!("alpha_{}", i + 1),
        axis_i: theta(i),
        axis_j: omega(i),
        angle: AngleRule::ArmJoint {
            theta: theta(i),
            omega: omega(i),
            gain: params.alpha0,
            kappa: params.kappa1,
            gravity: params.g0,
        },
    });
    OrthogonalField {
        rotations: neighbours.chain(joints).collect(),
    }
}

pub fn build_arm(params: &ArmParams) -> Result<QgInstance> {
    params.check()?;
    QgInstance::new(QgParams {
        state_cost: params.state_cost.clone(),
        control_cost: params.control_cost.clone(),
        value_form: params.value_form.clone(),
        gamma: params.gamma,
        noise_cov: params.noise_cov.clone(),
        coupling: arm_input_coupling(params.n_joints),
        strength: params.strength,
        drift: DriftRecipe::MetricNormalized {
            field: arm_orthogonal_field(params),
        },
        drift_gain: 1.0,
        tau: Some(params.tau),
    })
}
