//! Control-strength × dimension sweeps, exported as CSV matrices.

use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate_instance, Protocol, ReportMeta};
use crate::error::{Error, Result};
use crate::generator::Fixture;
use crate::par::Execution;
use crate::sim::PolicySpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub strength: f64,
    pub state_dim: usize,
    pub opt_gap: f64,
    pub regret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapMetric {
    OptGap,
    Regret,
}

/// Evaluates `policy` on every fixture at every strength `p`. The fixture's
/// own strength is replaced; the instance stays converse-optimal for any `p`.
pub fn strength_sweep(
    fixtures: &[Fixture],
    strengths: &[f64],
    policy: &PolicySpec,
    protocol: &Protocol,
    exec: Execution,
) -> Result<Vec<HeatmapCell>> {
    if fixtures.is_empty() || strengths.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cells = Vec::with_capacity(fixtures.len() * strengths.len());
    for fixture in fixtures {
        let base = fixture.build_instance()?;
        let resolved = protocol.resolve(fixture)?;
        let meta = ReportMeta {
            fixture_checksum: fixture.checksum()?,
            family: fixture.family.to_string(),
        };
        for &p in strengths {
            let inst = base.with_strength(p)?;
            let r = evaluate_instance(&inst, &meta, &fixture.schedule, policy, &resolved, exec)?;
            cells.push(HeatmapCell {
                strength: p,
                state_dim: inst.n(),
                opt_gap: r.opt_gap.mean,
                regret: r.regret.mean,
            });
        }
    }
    Ok(cells)
}

/// Rows are strengths (ascending), columns state dimensions (ascending).
/// Several fixtures with the same dimension are averaged; missing cells are
/// left empty.
pub fn heatmap_csv(cells: &[HeatmapCell], metric: HeatmapMetric) -> String {
    let mut strengths: Vec<f64> = cells.iter().map(|c| c.strength).collect();
    strengths.sort_by(f64::total_cmp);
    strengths.dedup();
    let mut dims: Vec<usize> = cells.iter().map(|c| c.state_dim).collect();
    dims.sort_unstable();
    dims.dedup();

    let mut out = String::from("p");
    for n in &dims {
        out.push_str(&format!(",n={n}"));
    }
    out.push('\n');
    for p in &strengths {
        out.push_str(&p.to_string());
        for n in &dims {
            let values: Vec<f64> = cells
                .iter()
                .filter(|c| c.strength == *p && c.state_dim == *n)
                .map(|c| match metric {
                    HeatmapMetric::OptGap => c.opt_gap,
                    HeatmapMetric::Regret => c.regret,
                })
                .collect();
            out.push(',');
            if !values.is_empty() {
                out.push_str(&(values.iter().sum::<f64>() / values.len() as f64).to_string());
            }
        }
        out.push('\n');
    }
    out
}
