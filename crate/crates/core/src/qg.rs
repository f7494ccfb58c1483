//! Quadratic–Gaussian converse-optimal construction.
//!
//! An instance prescribes `V*(s) = sᵀPs + b` together with quadratic costs
//! `q(s) = sᵀQs`, `ρ(a) = aᵀRa` and Gaussian noise `w ~ N(0, Σ)`. The drift
//! is then built so that `V*` solves the discounted Bellman equation exactly:
//! any drift satisfying the energy identity `sᵀ(P−Q)s = fᵀ H_γ(s) f` works,
//! and the metric-normalized form `f = H_γ^{-1/2} S(s) (P−Q)^{1/2} s` satisfies
//! it for every orthogonal field `S`.
//!
//! Control strength `p` is applied as `g ↦ p·g` at evaluation time, so one
//! instance can be re-evaluated at several strengths via [`QgInstance::with_strength`].

use std::sync::Arc;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    apply_givens_product, apply_givens_product_to, serde_rows, spd_sqrt, GivensRotation, Matrix, SpdFactorization,
    SymMatrix, Vector,
};

/// Maps actions into state increments, `g(s) ∈ ℝ^{n×m}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputCoupling {
    Constant {
        #[serde(with = "serde_rows")]
        matrix: Matrix,
    },
    /// Serial arm: `[g(s)]_{2i+1, i} = cos θ_i` (0-based), state ordered
    /// `[θ₁, ω₁, …, θ_n, ω_n]`.
    ArmCosine { n_joints: usize },
}

impl InputCoupling {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            InputCoupling::Constant { matrix } => (matrix.nrows(), matrix.ncols()),
            InputCoupling::ArmCosine { n_joints } => (2 * n_joints, *n_joints),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, InputCoupling::Constant { .. })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            InputCoupling::Constant { .. } => "constant",
            InputCoupling::ArmCosine { .. } => "arm_cosine",
        }
    }

    pub fn eval(&self, s: &Vector) -> Matrix {
        match self {
            InputCoupling::Constant { matrix } => matrix.clone(),
            InputCoupling::ArmCosine { n_joints } => {
                let n = *n_joints;
                let mut g = Matrix::zeros(2 * n, n);
                for i in 0..n {
                    g[(2 * i + 1, i)] = s[2 * i].cos();
                }
                g
            }
        }
    }
}

/// How a single rotation angle depends on the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AngleRule {
    Constant {
        angle: f64,
    },
    /// `p·(gain·tanh(kappa·θ·ω) + gravity·sin θ)`
    ArmJoint {
        theta: usize,
        omega: usize,
        gain: f64,
        kappa: f64,
        gravity: f64,
    },
    /// `p·gain·tanh(kappa·(θ_next − θ))`
    ArmNeighbor {
        theta: usize,
        theta_next: usize,
        gain: f64,
        kappa: f64,
    },
    /// `gain·s[index]`
    Linear {
        index: usize,
        gain: f64,
    },
    /// `gain·tanh(kappa·s[a]·s[b])`
    TanhProduct {
        a: usize,
        b: usize,
        gain: f64,
        kappa: f64,
    },
}

impl AngleRule {
    pub fn eval(&self, s: &Vector, strength: f64) -> f64 {
        match *self {
            AngleRule::Constant { angle } => angle,
            AngleRule::ArmJoint {
                theta,
                omega,
                gain,
                kappa,
                gravity,
            } => strength * (gain * (kappa * s[theta] * s[omega]).tanh() + gravity * s[theta].sin()),
            AngleRule::ArmNeighbor {
                theta,
                theta_next,
                gain,
                kappa,
            } => strength * gain * (kappa * (s[theta_next] - s[theta])).tanh(),
            AngleRule::Linear { index, gain } => gain * s[index],
            AngleRule::TanhProduct { a, b, gain, kappa } => gain * (kappa * s[a] * s[b]).tanh(),
        }
    }

    /// Supremum of `|angle|` over all states, when finite.
    pub fn bound(&self, strength: f64) -> Option<f64> {
        match *self {
            AngleRule::Constant { angle } => Some(angle.abs()),
            AngleRule::ArmJoint { gain, gravity, .. } => Some(strength * (gain.abs() + gravity.abs())),
            AngleRule::ArmNeighbor { gain, .. } => Some(strength * gain.abs()),
            AngleRule::Linear { gain, .. } => (gain == 0.0).then_some(0.0),
            AngleRule::TanhProduct { gain, .. } => Some(gain.abs()),
        }
    }

    fn indices(&self) -> Vec<usize> {
        match *self {
            AngleRule::Constant { .. } => vec![],
            AngleRule::ArmJoint { theta, omega, .. } => vec![theta, omega],
            AngleRule::ArmNeighbor { theta, theta_next, .. } => vec![theta, theta_next],
            AngleRule::Linear { index, .. } => vec![index],
            AngleRule::TanhProduct { a, b, .. } => vec![a, b],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRotation {
    /// Short human-readable label, e.g. `"beta_1"`.
    pub name: String,
    pub axis_i: usize,
    pub axis_j: usize,
    pub angle: AngleRule,
}

/// State-dependent orthogonal matrix `S(s) = G₁(s) G₂(s) ⋯ G_k(s)`.
/// An empty recipe is the identity field.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OrthogonalField {
    pub rotations: Vec<PlaneRotation>,
}

impl OrthogonalField {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn givens_at(&self, s: &Vector, strength: f64) -> Vec<GivensRotation> {
        self.rotations
            .iter()
            .map(|r| GivensRotation::new(r.axis_i, r.axis_j, r.angle.eval(s, strength)))
            .collect()
    }

    pub fn matrix(&self, s: &Vector, strength: f64) -> Result<Matrix> {
        apply_givens_product(&self.givens_at(s, strength), s.len())
    }

    /// `S(s)·v`.
    pub fn apply(&self, s: &Vector, strength: f64, v: &Vector) -> Result<Vector> {
        apply_givens_product_to(&self.givens_at(s, strength), v)
    }

    fn check_indices(&self, dim: usize) -> Result<()> {
        for r in &self.rotations {
            let planes = [r.axis_i, r.axis_j];
            for index in planes.into_iter().chain(r.angle.indices()) {
                if index >= dim {
                    return Err(Error::IndexOutOfRange { index, dim });
                }
            }
            if r.axis_i == r.axis_j {
                return Err(Error::InvalidParameter(format!(
                    "rotation {} uses the same axis twice",
                    r.name
                )));
            }
        }
        Ok(())
    }
}

/// Direction field `f̃(s)` for the square-root parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionField {
    /// `f̃(s) = M s`
    Linear {
        #[serde(with = "serde_rows")]
        matrix: Matrix,
    },
    /// `f̃(s) = S(s) s`
    Rotated { field: OrthogonalField },
}

impl DirectionField {
    fn eval(&self, s: &Vector, strength: f64) -> Result<Vector> {
        match self {
            DirectionField::Linear { matrix } => Ok(matrix * s),
            DirectionField::Rotated { field } => field.apply(s, strength, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameterization", rename_all = "snake_case")]
pub enum DriftRecipe {
    /// `f = H^{-1/2} S(s) (P−Q)^{1/2} s`
    MetricNormalized { field: OrthogonalField },
    /// `f = √(sᵀ(P−Q)s) · H^{-1/2} f̃(s) / ‖f̃(s)‖`, and `f = 0` at zero energy.
    SquareRoot { direction: DirectionField },
}

impl DriftRecipe {
    pub fn name(&self) -> &'static str {
        match self {
            DriftRecipe::MetricNormalized { .. } => "metric_normalized",
            DriftRecipe::SquareRoot { .. } => "square_root",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

/// Serializable description of a QG instance; everything needed to rebuild
/// the reference evaluators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgParams {
    /// `Q ⪰ 0`
    pub state_cost: SymMatrix,
    /// `R ≻ 0`
    pub control_cost: SymMatrix,
    /// `P ≻ 0`, with `P − Q ⪰ 0`
    pub value_form: SymMatrix,
    pub gamma: f64,
    /// `Σ ⪰ 0`
    pub noise_cov: SymMatrix,
    pub coupling: InputCoupling,
    /// Control strength `p ∈ (0, 1]`.
    pub strength: f64,
    pub drift: DriftRecipe,
    /// Multiplies the constructed drift. Anything but 1 breaks optimality;
    /// used to exercise the validators.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub drift_gain: f64,
    /// Sampling step, carried as family metadata.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseOffset {
    pub b: f64,
}

/// Every state-dependent quantity of the construction at one state.
#[derive(Debug, Clone)]
pub struct PointEval {
    /// `p·g(s)`
    pub coupling: Matrix,
    /// `B_p(s) = R + γ (p g)ᵀ P (p g)`
    pub hessian: SymMatrix,
    /// `H_γ^{(p)}(s)`
    pub metric: SymMatrix,
    pub drift: Vector,
    pub action: Vector,
}

#[derive(Debug)]
struct ConstantCache {
    coupling: Matrix,
    hessian: SymMatrix,
    hessian_chol: Cholesky<f64, nalgebra::Dyn>,
    metric: SymMatrix,
    metric_inv_sqrt: SymMatrix,
}

/// An immutable, validated converse-optimal control problem.
#[derive(Debug, Clone)]
pub struct QgInstance {
    params: QgParams,
    energy_root: SymMatrix,
    value_inv: SymMatrix,
    control_inv: Matrix,
    trace_p_sigma: f64,
    constant: Option<Arc<ConstantCache>>,
}

impl QgInstance {
    /// Builds an instance, checking shapes and the semidefiniteness
    /// requirements on `Q`, `R`, `P`, `Σ` and `P − Q`.
    pub fn new(params: QgParams) -> Result<Self> {
        SpdFactorization::new(&params.control_cost)?;
        for m in [&params.state_cost, &params.noise_cov] {
            spd_sqrt(m)?;
        }
        let mut inst = Self::new_unchecked(params)?;
        if inst.params.coupling.is_constant() {
            inst.constant = Some(Arc::new(inst.build_constant_cache()?));
        }
        Ok(inst)
    }

    /// Like [`QgInstance::new`] but does not require `R ≻ 0`, `Q ⪰ 0` or `Σ ⪰ 0`.
    /// Meant for constructing counterexamples for the validators; `P ≻ 0`
    /// and `P − Q ⪰ 0` are still needed to form the drift.
    pub fn new_unchecked(params: QgParams) -> Result<Self> {
        let n = params.value_form.dim();
        let m = params.control_cost.dim();
        let check = |context, expected, actual| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    context,
                    expected,
                    actual,
                })
            }
        };
        check("state cost Q", n, params.state_cost.dim())?;
        check("noise covariance", n, params.noise_cov.dim())?;
        let (gr, gc) = params.coupling.shape();
        check("coupling rows", n, gr)?;
        check("coupling columns", m, gc)?;
        if !(params.gamma > 0.0 && params.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1), got {}",
                params.gamma
            )));
        }
        if !(params.strength > 0.0 && params.strength <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "control strength must lie in (0, 1], got {}",
                params.strength
            )));
        }
        if !params.drift_gain.is_finite() {
            return Err(Error::NonFinite("drift gain"));
        }
        match &params.drift {
            DriftRecipe::MetricNormalized { field } => field.check_indices(n)?,
            DriftRecipe::SquareRoot { direction } => match direction {
                DirectionField::Linear { matrix } => {
                    check("direction field rows", n, matrix.nrows())?;
                    check("direction field columns", n, matrix.ncols())?;
                }
                DirectionField::Rotated { field } => field.check_indices(n)?,
            },
        }

        let value = SpdFactorization::new(&params.value_form)?;
        let energy_root = spd_sqrt(&params.value_form.sub(&params.state_cost))?;
        let control_inv = params
            .control_cost
            .matrix()
            .clone()
            .try_inverse()
            .ok_or(Error::NotSpd { min_eigenvalue: 0.0 })?;
        let trace_p_sigma = params
            .value_form
            .matrix()
            .component_mul(params.noise_cov.matrix())
            .sum();
        Ok(Self {
            energy_root,
            value_inv: value.inverse(),
            control_inv,
            trace_p_sigma,
            constant: None,
            params,
        })
    }

    fn build_constant_cache(&self) -> Result<ConstantCache> {
        let zero = Vector::zeros(self.n());
        let coupling = self.scaled_coupling(&zero);
        let hessian = self.hessian_from(&coupling);
        let hessian_chol = cholesky(&hessian)?;
        let metric = self.metric_from(&coupling, &hessian_chol);
        let metric_inv_sqrt = SpdFactorization::new(&metric)?.inv_sqrt();
        Ok(ConstantCache {
            coupling,
            hessian,
            hessian_chol,
            metric,
            metric_inv_sqrt,
        })
    }

    pub fn params(&self) -> &QgParams {
        &self.params
    }

    pub fn into_params(self) -> QgParams {
        self.params
    }

    /// Same instance at another control strength.
    pub fn with_strength(&self, strength: f64) -> Result<Self> {
        let mut params = self.params.clone();
        params.strength = strength;
        QgInstance::new(params)
    }

    /// Same instance with the drift multiplied by `gain` (breaks optimality
    /// unless `gain == 1`).
    pub fn with_drift_gain(&self, gain: f64) -> Result<Self> {
        let mut params = self.params.clone();
        params.drift_gain = gain;
        let mut inst = QgInstance::new_unchecked(params)?;
        inst.constant = self.constant.clone();
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.params.value_form.dim()
    }

    pub fn m(&self) -> usize {
        self.params.control_cost.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.params.gamma
    }

    pub fn strength(&self) -> f64 {
        self.params.strength
    }

    /// `(P − Q)^{1/2}`
    pub fn energy_root(&self) -> &SymMatrix {
        &self.energy_root
    }

    /// `p·g(s)`
    pub fn scaled_coupling(&self, s: &Vector) -> Matrix {
        match &self.constant {
            Some(c) => c.coupling.clone(),
            None => self.params.coupling.eval(s) * self.params.strength,
        }
    }

    fn hessian_from(&self, gp: &Matrix) -> SymMatrix {
        let p = self.params.value_form.matrix();
        let curvature = gp.transpose() * p * gp * self.params.gamma;
        SymMatrix::new(self.params.control_cost.matrix() + curvature).expect("square by shape")
    }

    fn metric_from(&self, gp: &Matrix, chol: &Cholesky<f64, nalgebra::Dyn>) -> SymMatrix {
        let gamma = self.params.gamma;
        let p = self.params.value_form.matrix();
        let pg = p * gp;
        let correction = &pg * chol.solve(&pg.transpose());
        SymMatrix::new((p - correction * gamma) * gamma).expect("square by shape")
    }

    fn check_state(&self, s: &Vector) -> Result<()> {
        if s.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "state",
                expected: self.n(),
                actual: s.len(),
            });
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(())
    }

    /// `B_p(s) = R + γ p² g(s)ᵀ P g(s)`.
    pub fn control_hessian(&self, s: &Vector) -> Result<SymMatrix> {
        self.check_state(s)?;
        if let Some(c) = &self.constant {
            return Ok(c.hessian.clone());
        }
        Ok(self.hessian_from(&self.scaled_coupling(s)))
    }

    /// `H_γ^{(p)}(s) = γ(P − γ p² P g B_p⁻¹ gᵀ P)`.
    pub fn discounted_metric(&self, s: &Vector) -> Result<SymMatrix> {
        self.check_state(s)?;
        if let Some(c) = &self.constant {
            return Ok(c.metric.clone());
        }
        let gp = self.scaled_coupling(s);
        let chol = cholesky(&self.hessian_from(&gp))?;
        Ok(self.metric_from(&gp, &chol))
    }

    /// The Woodbury form `γ(P⁻¹ + γ p² g R⁻¹ gᵀ)⁻¹`, computed independently
    /// of [`QgInstance::discounted_metric`].
    pub fn discounted_metric_woodbury(&self, s: &Vector) -> Result<SymMatrix> {
        self.check_state(s)?;
        let gamma = self.params.gamma;
        let gp = self.params.coupling.eval(s) * self.params.strength;
        let inner = self.value_inv.matrix() + &gp * &self.control_inv * gp.transpose() * gamma;
        let inner = SymMatrix::new(inner)?;
        Ok(SpdFactorization::new(&inner)?.inverse().scaled(gamma))
    }

    /// All state-dependent quantities at `s` in one pass.
    pub fn evaluate(&self, s: &Vector) -> Result<PointEval> {
        self.check_state(s)?;
        let (coupling, hessian, chol, metric, metric_inv_sqrt) = match &self.constant {
            Some(c) => (
                c.coupling.clone(),
                c.hessian.clone(),
                c.hessian_chol.clone(),
                c.metric.clone(),
                c.metric_inv_sqrt.clone(),
            ),
            None => {
                let gp = self.scaled_coupling(s);
                let hessian = self.hessian_from(&gp);
                let chol = cholesky(&hessian)?;
                let metric = self.metric_from(&gp, &chol);
                let inv_sqrt = SpdFactorization::new(&metric)?.inv_sqrt();
                (gp, hessian, chol, metric, inv_sqrt)
            }
        };
        let drift = self.drift_with(s, &metric_inv_sqrt)?;
        let pf = self.params.value_form.matrix() * &drift;
        let action = chol.solve(&(coupling.transpose() * pf)) * (-self.params.gamma);
        Ok(PointEval {
            coupling,
            hessian,
            metric,
            drift,
            action,
        })
    }

    fn drift_with(&self, s: &Vector, metric_inv_sqrt: &SymMatrix) -> Result<Vector> {
        let p = self.params.strength;
        let f = match &self.params.drift {
            DriftRecipe::MetricNormalized { field } => {
                let root_s = self.energy_root.matrix() * s;
                metric_inv_sqrt.matrix() * field.apply(s, p, &root_s)?
            }
            DriftRecipe::SquareRoot { direction } => {
                let energy = self.energy(s);
                if energy <= 0.0 {
                    return Ok(Vector::zeros(self.n()));
                }
                let dir = direction.eval(s, p)?;
                let norm = dir.norm();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::ZeroDirectionField);
                }
                metric_inv_sqrt.matrix() * dir * (energy.sqrt() / norm)
            }
        };
        Ok(f * self.params.drift_gain)
    }

    /// `sᵀ(P − Q)s`, clamped at zero.
    pub fn energy(&self, s: &Vector) -> f64 {
        (self.energy_root.matrix() * s).norm_squared()
    }

    /// `f_p(s)`.
    pub fn drift(&self, s: &Vector) -> Result<Vector> {
        Ok(self.evaluate(s)?.drift)
    }

    /// `a*_p(s) = −γ p B_p(s)⁻¹ g(s)ᵀ P f_p(s)`.
    pub fn optimal_action(&self, s: &Vector) -> Result<Vector> {
        Ok(self.evaluate(s)?.action)
    }

    pub fn noise_offset(&self) -> NoiseOffset {
        let g = self.params.gamma;
        NoiseOffset {
            b: g * self.trace_p_sigma / (1.0 - g),
        }
    }

    /// `tr(PΣ)`
    pub fn trace_p_sigma(&self) -> f64 {
        self.trace_p_sigma
    }

    /// `V*(s) = sᵀPs + b`.
    pub fn value(&self, s: &Vector) -> f64 {
        self.params.value_form.quad_form(s) + self.noise_offset().b
    }

    /// Optimal reward-to-go `V_r*(s) = −V*(s)`.
    pub fn reward_value(&self, s: &Vector) -> f64 {
        -self.value(s)
    }

    pub fn state_cost(&self, s: &Vector) -> f64 {
        self.params.state_cost.quad_form(s)
    }

    pub fn control_cost(&self, a: &Vector) -> f64 {
        self.params.control_cost.quad_form(a)
    }

    /// Stage reward `r(s, a) = −(sᵀQs + aᵀRa)`.
    pub fn reward(&self, s: &Vector, a: &Vector) -> f64 {
        -(self.state_cost(s) + self.control_cost(a))
    }

    /// `E[V*(z + w)]` for `z = f_p(s) + p g(s) a`, in closed form.
    pub fn expected_next_value(&self, s: &Vector, a: &Vector) -> Result<f64> {
        let pe = self.evaluate(s)?;
        Ok(self.expected_value_at(&(&pe.drift + &pe.coupling * a)))
    }

    /// `E[V*(z + w)] = zᵀPz + tr(PΣ) + b`.
    pub fn expected_value_at(&self, z: &Vector) -> f64 {
        self.params.value_form.quad_form(z) + self.trace_p_sigma + self.noise_offset().b
    }

    /// Bellman integrand `Φ_s(a) = q(s) + ρ(a) + γ E[V*(f + p g a + w)]`.
    pub fn bellman_integrand(&self, s: &Vector, a: &Vector) -> Result<f64> {
        let pe = self.evaluate(s)?;
        Ok(self.integrand_with(&pe, s, a))
    }

    fn integrand_with(&self, pe: &PointEval, s: &Vector, a: &Vector) -> f64 {
        let z = &pe.drift + &pe.coupling * a;
        self.state_cost(s) + self.control_cost(a) + self.params.gamma * self.expected_value_at(&z)
    }

    /// `δ(s) = |V*(s) − Φ_s(a*(s))|` with the analytic expectation.
    pub fn bellman_residual(&self, s: &Vector) -> Result<f64> {
        let pe = self.evaluate(s)?;
        Ok((self.value(s) - self.integrand_with(&pe, s, &pe.action)).abs())
    }

    /// `|sᵀ(P−Q)s − fᵀ H f|`.
    pub fn energy_residual(&self, s: &Vector) -> Result<f64> {
        let pe = self.evaluate(s)?;
        Ok((self.energy(s) - pe.metric.quad_form(&pe.drift)).abs())
    }
}

fn cholesky(m: &SymMatrix) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.matrix().clone()).ok_or_else(|| Error::NotSpd {
        min_eigenvalue: m.min_eigenvalue(),
    })
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    // S1 closed forms: B = 1.9, H = 0.9·(1 − 0.9/1.9) = 9/19,
    // f(s) = √(0.5·19/9)·s, a*(s) = −(0.9/1.9)·f(s).
    const F_GAIN: f64 = 1.027402333828163;
    const A_GAIN: f64 = -0.48666426339228773;

    #[test]
    fn s1_closed_forms() {
        let inst = s1();
        let s = v1(1.0);
        assert_relative_eq!(F_GAIN, (0.5f64 * 19.0 / 9.0).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(A_GAIN, -(0.9 / 1.9) * F_GAIN, epsilon = 1e-15);
        assert_relative_eq!(inst.control_hessian(&s).unwrap().matrix()[(0, 0)], 1.9, epsilon = 1e-12);
        assert_relative_eq!(
            inst.discounted_metric(&s).unwrap().matrix()[(0, 0)],
            9.0 / 19.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            inst.discounted_metric_woodbury(&s).unwrap().matrix()[(0, 0)],
            9.0 / 19.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(inst.drift(&s).unwrap()[0], F_GAIN, epsilon = 1e-12);
        assert_relative_eq!(inst.drift(&s).unwrap()[0], 1.027402, epsilon = 1e-6);
        assert_relative_eq!(inst.optimal_action(&s).unwrap()[0], A_GAIN, epsilon = 1e-12);
        assert_relative_eq!(inst.optimal_action(&s).unwrap()[0], -0.486664, epsilon = 1e-6);
        assert!(inst.bellman_residual(&s).unwrap() <= 1e-12);
    }

    #[test]
    fn s1_weaker_control_and_zero_coupling() {
        let mut params = s1_params();
        params.strength = 0.5;
        let inst = QgInstance::new(params).unwrap();
        assert_relative_eq!(
            inst.control_hessian(&v1(0.3)).unwrap().matrix()[(0, 0)],
            1.225,
            epsilon = 1e-12
        );

        let mut params = s1_params();
        params.coupling = InputCoupling::Constant {
            matrix: Matrix::zeros(1, 1),
        };
        let inst = QgInstance::new(params).unwrap();
        assert_eq!(inst.control_hessian(&v1(2.0)).unwrap().matrix()[(0, 0)], 1.0);
        assert_relative_eq!(inst.discounted_metric(&v1(2.0)).unwrap().matrix()[(0, 0)], 0.9);
    }

    #[test]
    fn zero_state_and_zero_energy() {
        let inst = s1();
        assert_eq!(inst.drift(&v1(0.0)).unwrap()[0], 0.0);
        assert_eq!(inst.optimal_action(&v1(0.0)).unwrap()[0], 0.0);
        assert_eq!(inst.bellman_residual(&v1(0.0)).unwrap(), 0.0);
        assert_eq!(inst.energy_residual(&v1(0.0)).unwrap(), 0.0);

        let mut params = s1_params();
        params.state_cost = params.value_form.clone();
        let inst = QgInstance::new(params).unwrap();
        for x in [-3.0, 0.5, 7.0] {
            assert_eq!(inst.drift(&v1(x)).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn energy_residual_scalar_and_perturbed() {
        let inst = s1();
        assert!(inst.energy_residual(&v1(2.0)).unwrap() < 1e-12);
        // S scaled by 1.01 is the same as a drift gain of 1.01
        let bent = inst.with_drift_gain(1.01).unwrap();
        assert!(bent.energy_residual(&v1(2.0)).unwrap() > 1e-3);
    }

    #[test]
    fn noise_offset_cases() {
        assert_eq!(s1().noise_offset().b, 0.0);

        let mut params = s1_params();
        params.noise_cov = SymMatrix::from_diagonal(&[0.04]);
        let inst = QgInstance::new(params).unwrap();
        assert_relative_eq!(inst.noise_offset().b, 0.36, epsilon = 1e-12);
        assert_relative_eq!(inst.value(&v1(1.0)), 1.36, epsilon = 1e-12);
        assert_eq!(inst.reward_value(&v1(1.0)), -inst.value(&v1(1.0)));

        let mut params = random_params(0, 2, 1);
        params.gamma = 0.5;
        params.value_form = SymMatrix::identity(2);
        params.state_cost = SymMatrix::zeros(2);
        params.noise_cov = SymMatrix::identity(2);
        let inst = QgInstance::new(params).unwrap();
        assert_relative_eq!(inst.noise_offset().b, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn expected_next_value_edges() {
        let inst = s1();
        let s = v1(0.7);
        let a = v1(-0.2);
        let z = inst.drift(&s).unwrap()[0] + a[0];
        assert_relative_eq!(inst.expected_next_value(&s, &a).unwrap(), z * z, epsilon = 1e-14);

        let mut params = s1_params();
        params.noise_cov = SymMatrix::from_diagonal(&[0.04]);
        let inst = QgInstance::new(params).unwrap();
        let zero = v1(0.0);
        assert_relative_eq!(
            inst.expected_next_value(&zero, &zero).unwrap(),
            0.04 + 0.36,
            epsilon = 1e-14
        );
    }

    #[test]
    fn expected_next_value_matches_monte_carlo() {
        let inst = QgInstance::new(random_params(5, 3, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let s = random_state(&mut rng, 3);
        let a = random_state(&mut rng, 2);
        let pe = inst.evaluate(&s).unwrap();
        let z = &pe.drift + &pe.coupling * &a;
        let chol = nalgebra::Cholesky::new(inst.params().noise_cov.matrix().clone()).unwrap();
        let l = chol.l();
        let draws = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let e = Vector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            let next = &z + &l * e;
            let v = inst.value(&next);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / draws as f64;
        let se = ((sum_sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        let exact = inst.expected_next_value(&s, &a).unwrap();
        assert!((mean - exact).abs() <= 4.0 * se, "mc {mean} exact {exact} se {se}");
    }

    #[test]
    fn s1_bellman_chain_closes() {
        let inst = s1();
        let s = v1(1.0);
        let a = A_GAIN;
        let next = F_GAIN + a;
        let rhs = 0.5 + a * a + 0.9 * next * next;
        assert_relative_eq!(rhs, 1.0, epsilon = 1e-12);
        assert_relative_eq!(next, 0.540738, epsilon = 1e-6);
        assert_relative_eq!(inst.bellman_integrand(&s, &v1(a)).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn corrupted_drift_breaks_bellman() {
        let inst = QgInstance::new(random_params(3, 4, 2)).unwrap();
        let bent = inst.with_drift_gain(1.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let s = random_state(&mut rng, 4);
            let delta = bent.bellman_residual(&s).unwrap();
            assert!(delta > 0.01 * inst.energy(&s), "{delta}");
        }
    }

    #[test]
    fn square_root_parameterization() {
        let mut params = random_params(8, 3, 1);
        params.drift = DriftRecipe::SquareRoot {
            direction: DirectionField::Linear {
                matrix: Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.3 }),
            },
        };
        let inst = QgInstance::new(params.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = random_state(&mut rng, 3);
            assert!(inst.energy_residual(&s).unwrap() <= 1e-8 * (1.0 + inst.energy(&s)));
            assert!(inst.bellman_residual(&s).unwrap() <= 1e-8 * (1.0 + inst.value(&s)));
        }
        assert_eq!(inst.drift(&Vector::zeros(3)).unwrap(), Vector::zeros(3));

        params.drift = DriftRecipe::SquareRoot {
            direction: DirectionField::Linear {
                matrix: Matrix::zeros(3, 3),
            },
        };
        let inst = QgInstance::new(params).unwrap();
        let s = random_state(&mut rng, 3);
        assert!(matches!(inst.drift(&s), Err(Error::ZeroDirectionField)));
    }

    #[test]
    fn constructor_rejects_bad_inputs() {
        let mut p = s1_params();
        p.state_cost = SymMatrix::from_diagonal(&[1.5]);
        assert!(matches!(QgInstance::new(p), Err(Error::NotPsd { .. })));
        let mut p = s1_params();
        p.gamma = 1.0;
        assert!(matches!(QgInstance::new(p), Err(Error::InvalidParameter(_))));
        let mut p = s1_params();
        p.strength = 0.0;
        assert!(QgInstance::new(p).is_err());
        let mut p = s1_params();
        p.control_cost = SymMatrix::from_diagonal(&[-0.1]);
        assert!(matches!(QgInstance::new(p.clone()), Err(Error::NotSpd { .. })));
        assert!(QgInstance::new_unchecked(p).is_ok());
        let inst = s1();
        assert!(matches!(
            inst.drift(&Vector::from_vec(vec![f64::NAN])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn arm_coupling_shape() {
        let g = InputCoupling::ArmCosine { n_joints: 2 };
        let s = Vector::from_vec(vec![0.0, 5.0, std::f64::consts::FRAC_PI_2, -1.0]);
        let m = g.eval(&s);
        assert_eq!(m.shape(), (4, 2));
        assert_eq!(m[(1, 0)], 1.0);
        assert!(m[(3, 1)].abs() < 1e-15);
    }
}
