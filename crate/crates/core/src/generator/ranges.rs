//! Sampling ranges for family parameters ψ.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{ArmParams, Family, FamilyParams, NvdexParams};
use crate::linalg::{random_spd, SymMatrix};

/// Cap on how often `P` is redrawn to get `P − Q ⪰ 0`.
pub const MAX_VALUE_FORM_DRAWS: usize = 100;

/// Closed interval `[low, high]`, written as a two-element list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl From<[f64; 2]> for Interval {
    fn from([low, high]: [f64; 2]) -> Self {
        Interval { low, high }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.low, i.high]
    }
}

impl Interval {
    pub const fn new(low: f64, high: f64) -> Self {
        Interval { low, high }
    }

    pub const fn point(x: f64) -> Self {
        Interval { low: x, high: x }
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.low.is_finite() && self.high.is_finite() && self.low <= self.high {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{what}: bad interval [{}, {}]",
                self.low, self.high
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // always consume one draw so fixed intervals don't shift later draws
        let u: f64 = rng.random();
        if self.low == self.high {
            self.low
        } else {
            self.low + (self.high - self.low) * u
        }
    }
}

/// A random SPD matrix `scale · U diag(λ) Uᵀ` with `λ ∈ [1, cond]`.
/// A zero scale yields the zero matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdSpec {
    pub scale: Interval,
    pub cond: Interval,
}

impl SpdSpec {
    pub const fn new(scale: Interval, cond: Interval) -> Self {
        SpdSpec { scale, cond }
    }

    fn check(&self, what: &str) -> Result<()> {
        self.scale.check(what)?;
        self.cond.check(what)?;
        if self.scale.low < 0.0 || self.cond.low < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "{what}: scale must be >= 0 and condition number >= 1"
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> SymMatrix {
        let scale = self.scale.sample(rng);
        let cond = self.cond.sample(rng);
        let m = random_spd(dim, cond, rng);
        if scale == 0.0 {
            SymMatrix::zeros(dim)
        } else {
            m.scaled(scale)
        }
    }
}

fn check_choices(what: &str, choices: &[usize]) -> Result<()> {
    if choices.is_empty() || choices.contains(&0) {
        Err(Error::InvalidParameter(format!(
            "{what}: choices must be non-empty and positive"
        )))
    } else {
        Ok(())
    }
}

fn pick<R: Rng + ?Sized>(choices: &[usize], rng: &mut R) -> usize {
    choices[rng.random_range(0..choices.len())]
}

fn check_unit(what: &str, i: &Interval, closed_top: bool) -> Result<()> {
    i.check(what)?;
    let top_ok = if closed_top { i.high <= 1.0 } else { i.high < 1.0 };
    if i.low > 0.0 && top_ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must lie in (0, 1)")))
    }
}

/// Draws `P` until `P − Q ⪰ 0`.
fn sample_value_form<R: Rng + ?Sized>(spec: &SpdSpec, q: &SymMatrix, rng: &mut R) -> Result<SymMatrix> {
    for _ in 0..MAX_VALUE_FORM_DRAWS {
        let p = spec.sample(q.dim(), rng);
        if p.sub(q).min_eigenvalue() >= 0.0 {
            return Ok(p);
        }
    }
    Err(Error::SamplingExhausted(MAX_VALUE_FORM_DRAWS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmRanges {
    pub n_joints: Vec<usize>,
    pub strength: Interval,
    pub gamma: Interval,
    pub value_form: SpdSpec,
    pub state_cost: SpdSpec,
    pub control_cost: SpdSpec,
    pub noise_cov: SpdSpec,
    pub alpha0: Interval,
    pub beta0: Interval,
    pub kappa1: Interval,
    pub kappa2: Interval,
    pub g0: Interval,
    pub tau: Interval,
}

impl Default for ArmRanges {
    fn default() -> Self {
        ArmRanges {
            n_joints: vec![1, 2, 3, 4],
            strength: Interval::new(0.3, 1.0),
            gamma: Interval::new(0.95, 0.99),
            value_form: SpdSpec::new(Interval::new(0.5, 1.5), Interval::new(1.0, 3.0)),
            state_cost: SpdSpec::new(Interval::new(0.1, 0.3), Interval::new(1.0, 2.0)),
            control_cost: SpdSpec::new(Interval::new(0.05, 0.5), Interval::new(1.0, 3.0)),
            noise_cov: SpdSpec::new(Interval::new(0.0, 0.01), Interval::new(1.0, 2.0)),
            alpha0: Interval::new(0.0, 0.5),
            beta0: Interval::new(0.0, 0.5),
            kappa1: Interval::new(0.5, 2.0),
            kappa2: Interval::new(0.5, 2.0),
            g0: Interval::new(0.0, 0.3),
            tau: Interval::new(0.02, 0.1),
        }
    }
}

impl ArmRanges {
    pub fn check(&self) -> Result<()> {
        check_choices("n_joints", &self.n_joints)?;
        check_unit("strength", &self.strength, true)?;
        check_unit("gamma", &self.gamma, false)?;
        self.value_form.check("value_form")?;
        self.state_cost.check("state_cost")?;
        self.control_cost.check("control_cost")?;
        self.noise_cov.check("noise_cov")?;
        if self.control_cost.scale.low <= 0.0 {
            return Err(Error::InvalidParameter("control_cost scale must be positive".into()));
        }
        for (what, i) in [
            ("alpha0", &self.alpha0),
            ("beta0", &self.beta0),
            ("kappa1", &self.kappa1),
            ("kappa2", &self.kappa2),
            ("g0", &self.g0),
            ("tau", &self.tau),
        ] {
            i.check(what)?;
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ArmParams> {
        let n = pick(&self.n_joints, rng);
        let d = 2 * n;
        let strength = self.strength.sample(rng);
        let gamma = self.gamma.sample(rng);
        let control_cost = self.control_cost.sample(n, rng);
        let state_cost = self.state_cost.sample(d, rng);
        let value_form = sample_value_form(&self.value_form, &state_cost, rng)?;
        let noise_cov = self.noise_cov.sample(d, rng);
        Ok(ArmParams {
            n_joints: n,
            strength,
            gamma,
            state_cost,
            control_cost,
            value_form,
            noise_cov,
            alpha0: self.alpha0.sample(rng),
            beta0: self.beta0.sample(rng),
            kappa1: self.kappa1.sample(rng),
            kappa2: self.kappa2.sample(rng),
            g0: self.g0.sample(rng),
            tau: self.tau.sample(rng),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NvdexRanges {
    pub modules: Vec<usize>,
    pub r_v: Vec<usize>,
    pub r_omega: Vec<usize>,
    pub strength: Interval,
    pub gamma: Interval,
    pub value_form: SpdSpec,
    /// Only used when `rho_target` is unset.
    pub state_cost: SpdSpec,
    pub control_cost: SpdSpec,
    pub noise_cov: SpdSpec,
    pub alpha: Interval,
    pub kappa: Interval,
    pub tau: Interval,
    pub rho_target: Option<Interval>,
    pub cross_coupling: bool,
    pub heading_rotation: bool,
}

impl Default for NvdexRanges {
    fn default() -> Self {
        NvdexRanges {
            modules: vec![1, 2],
            r_v: vec![1, 2],
            r_omega: vec![1, 2],
            strength: Interval::new(0.5, 1.0),
            gamma: Interval::new(0.97, 0.995),
            value_form: SpdSpec::new(Interval::new(0.5, 1.5), Interval::new(1.0, 3.0)),
            state_cost: SpdSpec::new(Interval::new(0.1, 0.3), Interval::new(1.0, 2.0)),
            control_cost: SpdSpec::new(Interval::new(0.05, 0.5), Interval::new(1.0, 3.0)),
            noise_cov: SpdSpec::new(Interval::new(0.0, 0.005), Interval::new(1.0, 2.0)),
            alpha: Interval::new(0.0, 0.5),
            kappa: Interval::new(0.5, 2.0),
            tau: Interval::new(0.05, 0.2),
            rho_target: None,
            cross_coupling: false,
            heading_rotation: true,
        }
    }
}

impl NvdexRanges {
    pub fn check(&self) -> Result<()> {
        check_choices("modules", &self.modules)?;
        check_choices("r_v", &self.r_v)?;
        check_choices("r_omega", &self.r_omega)?;
        check_unit("strength", &self.strength, true)?;
        check_unit("gamma", &self.gamma, false)?;
        self.value_form.check("value_form")?;
        self.state_cost.check("state_cost")?;
        self.control_cost.check("control_cost")?;
        self.noise_cov.check("noise_cov")?;
        if self.control_cost.scale.low <= 0.0 {
            return Err(Error::InvalidParameter("control_cost scale must be positive".into()));
        }
        for (what, i) in [("alpha", &self.alpha), ("kappa", &self.kappa), ("tau", &self.tau)] {
            i.check(what)?;
        }
        if self.tau.low <= 0.0 {
            return Err(Error::InvalidParameter("tau must be positive".into()));
        }
        if let Some(r) = &self.rho_target {
            r.check("rho_target")?;
            if r.low <= 0.0 {
                return Err(Error::InvalidParameter("rho_target must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NvdexParams> {
        let modules = pick(&self.modules, rng);
        let r_v = pick(&self.r_v, rng);
        let r_omega = pick(&self.r_omega, rng);
        let n = (3 + r_v + r_omega) * modules;
        let strength = self.strength.sample(rng);
        let gamma = self.gamma.sample(rng);
        let control_cost = self.control_cost.sample(2 * modules, rng);
        let rho_target = self.rho_target.map(|r| r.sample(rng));
        let (state_cost, value_form) = match rho_target {
            // Q is replaced by βP during the build
            Some(_) => (SymMatrix::zeros(n), self.value_form.sample(n, rng)),
            None => {
                let q = self.state_cost.sample(n, rng);
                let p = sample_value_form(&self.value_form, &q, rng)?;
                (q, p)
            }
        };
        let noise_cov = self.noise_cov.sample(n, rng);
        Ok(NvdexParams {
            modules,
            r_v,
            r_omega,
            strength,
            gamma,
            state_cost,
            control_cost,
            value_form,
            noise_cov,
            alpha: self.alpha.sample(rng),
            kappa: self.kappa.sample(rng),
            rho_target,
            tau: self.tau.sample(rng),
            cross_coupling: self.cross_coupling,
            heading_rotation: self.heading_rotation,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyRanges {
    Arm(ArmRanges),
    Nvdex(NvdexRanges),
}

impl FamilyRanges {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Arm => FamilyRanges::Arm(ArmRanges::default()),
            Family::Nvdex => FamilyRanges::Nvdex(NvdexRanges::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            FamilyRanges::Arm(_) => Family::Arm,
            FamilyRanges::Nvdex(_) => Family::Nvdex,
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            FamilyRanges::Arm(r) => r.check(),
            FamilyRanges::Nvdex(r) => r.check(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FamilyParams> {
        Ok(match self {
            FamilyRanges::Arm(r) => FamilyParams::Arm(r.sample(rng)?),
            FamilyRanges::Nvdex(r) => FamilyParams::Nvdex(r.sample(rng)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_respect_ranges_and_psd_gap() {
        let ranges = ArmRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let p = ranges.sample(&mut rng).unwrap();
            assert!(ranges.n_joints.contains(&p.n_joints));
            assert!((0.95..=0.99).contains(&p.gamma));
            assert!(p.value_form.sub(&p.state_cost).min_eigenvalue() >= 0.0);
            assert!(p.noise_cov.min_eigenvalue() >= -1e-15);
        }
    }

    #[test]
    fn impossible_psd_gap_exhausts() {
        let ranges = ArmRanges {
            value_form: SpdSpec::new(Interval::point(0.1), Interval::point(1.0)),
            state_cost: SpdSpec::new(Interval::point(1.0), Interval::point(1.0)),
            ..ArmRanges::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(ranges.sample(&mut rng), Err(Error::SamplingExhausted(_))));
    }

    #[test]
    fn nvdex_with_target_defers_state_cost() {
        let ranges = NvdexRanges {
            rho_target: Some(Interval::point(1.2)),
            ..NvdexRanges::default()
        };
        let p = ranges.sample(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(p.rho_target, Some(1.2));
        assert_eq!(p.state_cost.trace(), 0.0);
    }

    #[test]
    fn range_checks() {
        assert!(ArmRanges::default().check().is_ok());
        assert!(NvdexRanges::default().check().is_ok());
        let bad = ArmRanges {
            gamma: Interval::new(0.9, 1.0),
            ..ArmRanges::default()
        };
        assert!(bad.check().is_err());
        let bad = ArmRanges {
            n_joints: vec![],
            ..ArmRanges::default()
        };
        assert!(bad.check().is_err());
        let bad = ArmRanges {
            strength: Interval::new(0.8, 0.2),
            ..ArmRanges::default()
        };
        assert!(bad.check().is_err());
    }

    #[test]
    fn ranges_yaml_round_trip_with_partial_input() {
        let r: FamilyRanges = serde_yaml::from_str("family: arm\nn_joints: [2]\ngamma: [0.9, 0.9]\n").unwrap();
        match &r {
            FamilyRanges::Arm(a) => {
                assert_eq!(a.n_joints, vec![2]);
                assert_eq!(a.gamma, Interval::point(0.9));
                assert_eq!(a.tau, ArmRanges::default().tau);
            }
            _ => panic!("wrong family"),
        }
        let text = serde_yaml::to_string(&r).unwrap();
        assert_eq!(serde_yaml::from_str::<FamilyRanges>(&text).unwrap(), r);
    }
}
