//! Oracle-referenced scoring: optimality gap, regret, paired bootstrap.
//!
//! The per-step regret gap is `r(s_k, π(s_k)) − r(s_k, a*(s_k))` at the
//! states visited by π. Because both terms share the state, only the control
//! cost differs: for `π = κa*` the gap is `(1 − κ²)·a*ᵀRa* ≥ 0` when
//! `κ ∈ [0, 1]`. The return difference against an oracle rollout under the
//! same noise is reported alongside as `regret_return_diff`.

mod evaluate;
mod heatmap;
mod metrics;

pub use evaluate::{
    evaluate, evaluate_instance, EvalReport, Protocol, ReportMeta, ResolvedProtocol, TrialResult, CSV_HEADER,
};
pub use heatmap::{heatmap_csv, strength_sweep, HeatmapCell, HeatmapMetric};
pub use metrics::{opt_gap, paired_bootstrap, regret, BootstrapConfig, Estimate};
