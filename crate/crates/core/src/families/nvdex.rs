//! Nonholonomic vehicle with dynamic extension (NVDEx).
//!
//! Per module the state is `[x, y, φ, v⁽⁰⁾…v⁽ʳᵛ⁻¹⁾, ω⁽⁰⁾…ω⁽ʳʷ⁻¹⁾]` and the two
//! accelerations enter only at the top of each integrator chain, so the
//! coupling `G` is constant and so is the discounted metric. Open-loop
//! instability is set by choosing `Q = βP`, which scales the linearization
//! `A₀ = H^{-1/2}(P−Q)^{1/2}` by `√(1−β)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spd_sqrt, spectral_radius, Matrix, SpdFactorization, SymMatrix, Vector};
use crate::qg::{AngleRule, DriftRecipe, InputCoupling, OrthogonalField, PlaneRotation, QgInstance, QgParams};

/// Cap on how often `R` is halved while searching for a large enough base radius.
pub const MAX_R_HALVINGS: usize = 60;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvdexParams {
    /// Number of vehicle modules `K`.
    pub modules: usize,
    pub r_v: usize,
    pub r_omega: usize,
    /// Control strength `p ∈ (0, 1]`.
    pub strength: f64,
    pub gamma: f64,
    /// Ignored (replaced by `βP`) when `rho_target` is set.
    pub state_cost: SymMatrix,
    pub control_cost: SymMatrix,
    pub value_form: SymMatrix,
    pub noise_cov: SymMatrix,
    pub alpha: f64,
    pub kappa: f64,
    #[serde(default)]
    pub rho_target: Option<f64>,
    pub tau: f64,
    /// Adds `(x, v⁽⁰⁾)` and `(y, ω⁽⁰⁾)` rotations with the same bounded-tanh template.
    #[serde(default)]
    pub cross_coupling: bool,
    /// Rotation of the `(x, y)` plane by the heading `φ`.
    #[serde(default = "yes")]
    pub heading_rotation: bool,
}

impl NvdexParams {
    pub fn module_dim(&self) -> usize {
        3 + self.r_v + self.r_omega
    }

    pub fn state_dim(&self) -> usize {
        self.module_dim() * self.modules
    }

    pub fn action_dim(&self) -> usize {
        2 * self.modules
    }

    fn check(&self) -> Result<()> {
        if self.modules == 0 || self.r_v == 0 || self.r_omega == 0 {
            return Err(Error::InvalidParameter("NVDEx needs K, r_v, r_omega >= 1".into()));
        }
        if let Some(t) = self.rho_target {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!("rho_target must be positive, got {t}")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if !(self.alpha.is_finite() && self.kappa.is_finite()) {
            return Err(Error::NonFinite("NVDEx gains"));
        }
        let n = self.state_dim();
        for (what, m, expected) in [
            ("Q", &self.state_cost, n),
            ("P", &self.value_form, n),
            ("Σ", &self.noise_cov, n),
            ("R", &self.control_cost, self.action_dim()),
        ] {
            if m.dim() != expected {
                return Err(Error::InvalidParameter(format!(
                    "NVDEx {what} has dimension {}, expected {expected}",
                    m.dim()
                )));
            }
        }
        Ok(())
    }
}

/// `G = blkdiag(G_mod, …)`, `G_mod` holding `τ` at the top of the linear and
/// angular velocity chains.
pub fn nvdex_input_coupling(modules: usize, r_v: usize, r_omega: usize, tau: f64) -> InputCoupling {
    let md = 3 + r_v + r_omega;
    let mut g = Matrix::zeros(md * modules, 2 * modules);
    for k in 0..modules {
        let off = k * md;
        g[(off + 2 + r_v, 2 * k)] = tau;
        g[(off + 2 + r_v + r_omega, 2 * k + 1)] = tau;
    }
    InputCoupling::Constant { matrix: g }
}

/// Per module, in product order: heading rotation of `(x, y)` by `φ`, the
/// `(v⁽⁰⁾, ω⁽⁰⁾)` coupling by `ν = α tanh(κ v⁽⁰⁾ω⁽⁰⁾)`, then the optional
/// cross-couplings.
pub fn nvdex_orthogonal_field(params: &NvdexParams) -> OrthogonalField {
    let md = params.module_dim();
    let mut rotations = Vec::new();
    let tanh = |a, b| AngleRule::TanhProduct {
        a,
        b,
        gain: params.alpha,
        kappa: params.kappa,
    };
    for k in 0..params.modules {
        let off = k * md;
        let (x, y, phi) = (off, off + 1, off + 2);
        let (v0, w0) = (off + 3, off + 3 + params.r_v);
        if params.heading_rotation {
            rotations.push(PlaneRotation {
                name: format!("heading_{}", k + 1),
                axis_i: x,
                axis_j: y,
                angle: AngleRule::Linear { index: phi, gain: 1.0 },
            });
        }
        rotations.push(PlaneRotation {
            name: format!("nu_{}", k + 1),
            axis_i: v0,
            axis_j: w0,
            angle: tanh(v0, w0),
        });
        if params.cross_coupling {
            rotations.push(PlaneRotation {
                name: format!("cross_xv_{}", k + 1),
                axis_i: x,
                axis_j: v0,
                angle: tanh(x, v0),
            });
            rotations.push(PlaneRotation {
                name: format!("cross_yw_{}", k + 1),
                axis_i: y,
                axis_j: w0,
                angle: tanh(y, w0),
            });
        }
    }
    OrthogonalField { rotations }
}

/// Result of tuning `β` (and possibly `R`) to a target open-loop radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityTuning {
    pub beta: f64,
    pub control_cost: SymMatrix,
    /// `ρ(H^{-1/2} P^{1/2})` at the final `R`.
    pub rho_base: f64,
    pub rho_target: f64,
    pub r_halvings: usize,
}

fn constant_metric(p: &SymMatrix, r: &SymMatrix, gamma: f64, gp: &Matrix) -> Result<SymMatrix> {
    let b = SymMatrix::new(r.matrix() + gp.transpose() * p.matrix() * gp * gamma)?;
    let b_inv = SpdFactorization::new(&b)?.inverse();
    let pg = p.matrix() * gp;
    let h = (p.matrix() - &pg * b_inv.matrix() * pg.transpose() * gamma) * gamma;
    SymMatrix::new(h)
}

fn base_radius(p: &SymMatrix, p_root: &SymMatrix, r: &SymMatrix, gamma: f64, gp: &Matrix) -> Result<f64> {
    let h = constant_metric(p, r, gamma, gp)?;
    let h_inv_sqrt = SpdFactorization::new(&h)?.inv_sqrt();
    spectral_radius(&(h_inv_sqrt.matrix() * p_root.matrix()))
}

/// Picks `β` so that `ρ(A₀) = ρ_target` for `Q = βP`, halving `R` first
/// while `ρ_base ≤ ρ_target`.
pub fn tune_instability(
    value_form: &SymMatrix,
    control_cost: &SymMatrix,
    gamma: f64,
    coupling: &Matrix,
    strength: f64,
    rho_target: f64,
) -> Result<InstabilityTuning> {
    if !(rho_target > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rho_target must be positive, got {rho_target}"
        )));
    }
    let gp = coupling * strength;
    let p_root = spd_sqrt(value_form)?;
    let mut r = control_cost.clone();
    let mut rho_base = base_radius(value_form, &p_root, &r, gamma, &gp)?;
    let mut halvings = 0;
    while rho_base <= rho_target {
        if halvings == MAX_R_HALVINGS {
            return Err(Error::Unreachable {
                target: rho_target,
                base: rho_base,
                halvings,
            });
        }
        r = r.scaled(0.5);
        halvings += 1;
        rho_base = base_radius(value_form, &p_root, &r, gamma, &gp)?;
    }
    let beta = 1.0 - (rho_target / rho_base).powi(2);
    Ok(InstabilityTuning {
        beta,
        control_cost: r,
        rho_base,
        rho_target,
        r_halvings: halvings,
    })
}

#[derive(Debug, Clone)]
pub struct NvdexBuild {
    pub instance: QgInstance,
    pub tuning: Option<InstabilityTuning>,
}

pub fn build_nvdex(params: &NvdexParams) -> Result<NvdexBuild> {
    params.check()?;
    let coupling = nvdex_input_coupling(params.modules, params.r_v, params.r_omega, params.tau);
    let InputCoupling::Constant { matrix: g } = &coupling else {
        unreachable!("NVDEx coupling is constant")
    };
    let (state_cost, control_cost, tuning) = match params.rho_target {
        Some(target) => {
            let t = tune_instability(
                &params.value_form,
                &params.control_cost,
                params.gamma,
                g,
                params.strength,
                target,
            )?;
            (params.value_form.scaled(t.beta), t.control_cost.clone(), Some(t))
        }
        None => (params.state_cost.clone(), params.control_cost.clone(), None),
    };
    let instance = QgInstance::new(QgParams {
        state_cost,
        control_cost,
        value_form: params.value_form.clone(),
        gamma: params.gamma,
        noise_cov: params.noise_cov.clone(),
        coupling,
        strength: params.strength,
        drift: DriftRecipe::MetricNormalized {
            field: nvdex_orthogonal_field(params),
        },
        drift_gain: 1.0,
        tau: Some(params.tau),
    })?;
    Ok(NvdexBuild { instance, tuning })
}

/// `A₀ = H_γ(0)^{-1/2} (P − Q)^{1/2}`, the drift Jacobian at the origin
/// whenever `S(0) = I`.
pub fn linearization_at_origin(inst: &QgInstance) -> Result<Matrix> {
    let h = inst.discounted_metric(&Vector::zeros(inst.n()))?;
    let h_inv_sqrt = SpdFactorization::new(&h)?.inv_sqrt();
    Ok(h_inv_sqrt.matrix() * inst.energy_root().matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_spd;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn sample_nvdex(seed: u64, k: usize, r_v: usize, r_omega: usize, rho: Option<f64>) -> NvdexParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (3 + r_v + r_omega) * k;
        NvdexParams {
            modules: k,
            r_v,
            r_omega,
            strength: 0.8,
            gamma: 0.99,
            state_cost: random_spd(n, 2.0, &mut rng).scaled(0.2),
            control_cost: random_spd(2 * k, 2.0, &mut rng).scaled(0.1),
            value_form: random_spd(n, 2.0, &mut rng),
            noise_cov: SymMatrix::zeros(n),
            alpha: 0.3,
            kappa: 1.0,
            rho_target: rho,
            tau: 0.1,
            cross_coupling: false,
            heading_rotation: true,
        }
    }

    fn uniform(rng: &mut impl Rng, n: usize, half: f64) -> Vector {
        Vector::from_fn(n, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * half)
    }

    #[test]
    fn coupling_layout() {
        let InputCoupling::Constant { matrix: g } = nvdex_input_coupling(1, 1, 1, 0.1) else {
            panic!()
        };
        assert_eq!(g.shape(), (5, 2));
        let nonzero: Vec<_> = (0..5)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .filter(|&(i, j)| g[(i, j)] != 0.0)
            .collect();
        // 1-based (4,1) and (5,2)
        assert_eq!(nonzero, vec![(3, 0), (4, 1)]);
        assert_eq!(g[(3, 0)], 0.1);
        assert_eq!(g[(4, 1)], 0.1);

        let InputCoupling::Constant { matrix: g2 } = nvdex_input_coupling(2, 1, 1, 0.1) else {
            panic!()
        };
        assert_eq!(g2.shape(), (10, 4));
        assert_eq!(g2.view((0, 0), (5, 2)), g.view((0, 0), (5, 2)));
        assert_eq!(g2.view((5, 2), (5, 2)), g.view((0, 0), (5, 2)));
        assert!(g2.view((0, 2), (5, 2)).iter().all(|x| *x == 0.0));

        let InputCoupling::Constant { matrix: g3 } = nvdex_input_coupling(2, 3, 2, 0.2) else {
            panic!()
        };
        let gtg = g3.transpose() * &g3;
        assert_relative_eq!(gtg, Matrix::identity(4, 4) * 0.04, epsilon = 1e-15);
    }

    #[test]
    fn field_identity_and_bounds() {
        let params = sample_nvdex(1, 2, 2, 1, None);
        let n = params.state_dim();
        let field = nvdex_orthogonal_field(&params);
        assert_eq!(field.matrix(&Vector::zeros(n), 1.0).unwrap(), Matrix::identity(n, n));

        let flat = NvdexParams {
            alpha: 0.0,
            heading_rotation: false,
            ..params.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = uniform(&mut rng, n, 2.0);
        assert_eq!(
            nvdex_orthogonal_field(&flat).matrix(&s, 1.0).unwrap(),
            Matrix::identity(n, n)
        );

        let crossed = NvdexParams {
            cross_coupling: true,
            ..params.clone()
        };
        let crossed_field = nvdex_orthogonal_field(&crossed);
        for _ in 0..10_000 {
            let s = uniform(&mut rng, n, 5.0);
            for r in field.rotations.iter().chain(&crossed_field.rotations) {
                if r.name.starts_with("nu") || r.name.starts_with("cross") {
                    assert!(r.angle.eval(&s, 1.0).abs() <= params.alpha);
                }
            }
        }
        for _ in 0..50 {
            let s = uniform(&mut rng, n, 5.0);
            let m = crossed_field.matrix(&s, 1.0).unwrap();
            assert!((m.transpose() * &m - Matrix::identity(n, n)).amax() < 1e-12);
        }
    }

    #[test]
    fn beta_from_radii() {
        // ρ_base = 1.5, ρ_target = 1.2 → β = 1 − 0.64
        assert_relative_eq!(1.0 - (1.2f64 / 1.5).powi(2), 0.36, epsilon = 1e-15);
    }

    #[test]
    fn tuning_hits_target() {
        for (seed, target) in [(1u64, 1.05), (2, 1.2), (3, 1.5)] {
            let params = sample_nvdex(seed, 1, 1, 1, Some(target));
            let built = build_nvdex(&params).unwrap();
            let t = built.tuning.as_ref().unwrap();
            assert!((0.0..1.0).contains(&t.beta));
            assert_relative_eq!((1.0 - t.beta).sqrt() * t.rho_base, target, epsilon = 1e-9);
            let a0 = linearization_at_origin(&built.instance).unwrap();
            let rho = spectral_radius(&a0).unwrap();
            assert!((rho - target).abs() <= 1e-6, "rho {rho} target {target}");
        }
    }

    #[test]
    fn no_scaling_when_base_already_large() {
        let params = sample_nvdex(4, 1, 1, 1, None);
        let InputCoupling::Constant { matrix: g } = nvdex_input_coupling(1, 1, 1, 0.1) else {
            panic!()
        };
        let t = tune_instability(&params.value_form, &params.control_cost, 0.99, &g, 0.8, 0.5).unwrap();
        assert_eq!(t.r_halvings, 0);
        assert_eq!(t.control_cost, params.control_cost);
    }

    #[test]
    fn unreachable_target() {
        let params = sample_nvdex(4, 1, 1, 1, None);
        let g = Matrix::zeros(5, 2);
        let err = tune_instability(&params.value_form, &params.control_cost, 0.99, &g, 0.8, 1e3);
        assert!(matches!(
            err,
            Err(Error::Unreachable {
                halvings: MAX_R_HALVINGS,
                ..
            })
        ));
    }

    #[test]
    fn linear_drift_without_rotations() {
        let params = NvdexParams {
            alpha: 0.0,
            heading_rotation: false,
            ..sample_nvdex(5, 1, 2, 1, Some(1.2))
        };
        let inst = build_nvdex(&params).unwrap().instance;
        let a0 = linearization_at_origin(&inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let s = uniform(&mut rng, 6, 1.0);
            assert_relative_eq!(inst.drift(&s).unwrap(), &a0 * &s, epsilon = 1e-12);
        }
    }

    #[test]
    fn open_loop_grows_closed_loop_bounded() {
        let inst = build_nvdex(&sample_nvdex(7, 1, 1, 1, Some(1.2))).unwrap().instance;
        let n = inst.n();
        let mut s = Vector::from_element(n, 0.1 / (n as f64).sqrt());
        let mut closed = s.clone();
        let mut closed_max: f64 = 0.0;
        for _ in 0..50 {
            s = inst.drift(&s).unwrap();
            let pe = inst.evaluate(&closed).unwrap();
            closed = &pe.drift + &pe.coupling * &pe.action;
            closed_max = closed_max.max(closed.norm());
        }
        assert!(s.norm() > 0.1);
        assert!(closed_max < 10.0, "closed loop max {closed_max}");
    }

    #[test]
    fn residual_sweep() {
        let params = NvdexParams {
            cross_coupling: true,
            ..sample_nvdex(9, 2, 2, 2, Some(1.2))
        };
        let inst = build_nvdex(&params).unwrap().instance;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let s = uniform(&mut rng, inst.n(), 1.0);
            assert!(inst.energy_residual(&s).unwrap() <= 1e-8 * (1.0 + inst.energy(&s)));
            assert!(inst.bellman_residual(&s).unwrap() <= 1e-8 * (1.0 + inst.value(&s)));
        }
    }
}
