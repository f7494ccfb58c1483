use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{map_indexed, Execution};
use crate::rng::{stream_rng, TAG_BOOTSTRAP};
use crate::sim::discounted_sum;

/// `(V_r^π − V_r*) / (|V_r*| + ε)`; negative when π collects less reward.
pub fn opt_gap(v_pi: f64, v_star: f64, epsilon: f64) -> f64 {
    (v_pi - v_star) / (v_star.abs() + epsilon)
}

/// `Σ_{k<T} γᵏ gap_k`.
pub fn regret(gaps: &[f64], gamma: f64, horizon: usize) -> Result<f64> {
    if gaps.len() < horizon {
        return Err(Error::LengthMismatch(format!(
            "{} per-step gaps for horizon {horizon}",
            gaps.len()
        )));
    }
    Ok(discounted_sum(&gaps[..horizon], gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            resamples: 10_000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn check(&self) -> Result<()> {
        if self.resamples == 0 || !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "bootstrap needs resamples >= 1 and level in (0, 1), got {} and {}",
                self.resamples, self.level
            )));
        }
        Ok(())
    }
}

/// Mean and percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * t
}

/// Percentile bootstrap of the mean. Each value is already a paired
/// difference (or a per-trial statistic under common random numbers), so
/// resampling trials keeps the pairing. Resample `b` draws from a stream
/// derived from `(seed, b)`, making the result independent of scheduling.
pub fn paired_bootstrap(values: &[f64], config: &BootstrapConfig, exec: Execution) -> Result<Estimate> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    config.check()?;
    let n = values.len();
    let m = mean(values);
    let mut means = map_indexed(exec, config.resamples, |b| {
        use rand::Rng;
        let mut rng = stream_rng(config.seed, &[TAG_BOOTSTRAP, b as u64]);
        (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64
    });
    means.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - config.level);
    // the percentile interval can miss the sample mean by rounding; widen it
    Ok(Estimate {
        mean: m,
        ci_low: quantile(&means, tail).min(m),
        ci_high: quantile(&means, 1.0 - tail).max(m),
    })
}
