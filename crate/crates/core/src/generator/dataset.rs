use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fixture::{write_atomic, Fixture, FixtureSeeds, FORMAT_VERSION};
use super::ranges::FamilyRanges;
use super::validate::{validate_instance, ValidationConfig};
use crate::error::{Error, Result};
use crate::families::{DifficultyWeights, FamilyParams};
use crate::par::{try_map_indexed, Execution};
use crate::rng::{derive_seed, stream_rng, TAG_NOISE, TAG_SAMPLE, TAG_SCHEDULE};
use crate::sim::InitialStateSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum InstanceSource {
    /// Draw ψ from ranges.
    Sampled { ranges: FamilyRanges },
    /// Use ψ as given; only the seeds differ between copies.
    Fixed { params: FamilyParams },
}

impl InstanceSource {
    pub fn family_name(&self) -> &'static str {
        match self {
            InstanceSource::Sampled { ranges } => ranges.family().as_str(),
            InstanceSource::Fixed { params } => params.family().as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub count: usize,
    #[serde(flatten)]
    pub source: InstanceSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub master_seed: u64,
    pub entries: Vec<DatasetEntry>,
    pub validation: ValidationConfig,
    /// Default evaluation horizon written into each fixture.
    pub horizon: usize,
    /// Attempts per fixture before giving up.
    pub retry_budget: usize,
    pub difficulty_weights: DifficultyWeights,
    pub action_bound: Option<f64>,
    pub histogram_bins: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            master_seed: 0,
            entries: Vec::new(),
            validation: ValidationConfig::default(),
            horizon: 200,
            retry_budget: 16,
            difficulty_weights: DifficultyWeights::default(),
            action_bound: None,
            histogram_bins: 10,
        }
    }
}

impl DatasetConfig {
    pub fn check(&self) -> Result<()> {
        self.validation.check()?;
        if self.horizon == 0 {
            return Err(Error::InvalidHorizon);
        }
        if self.retry_budget == 0 || self.histogram_bins == 0 {
            return Err(Error::InvalidParameter(
                "retry_budget and histogram_bins must be positive".into(),
            ));
        }
        DifficultyWeights::new(self.difficulty_weights.0)?;
        if let Some(b) = self.action_bound {
            if !(b > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "action bound must be positive, got {b}"
                )));
            }
        }
        for e in &self.entries {
            if let InstanceSource::Sampled { ranges } = &e.source {
                ranges.check()?;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }
}

/// One discarded attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub attempt: usize,
    pub seed: u64,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub file: String,
    pub family: String,
    pub index: usize,
    pub seed: u64,
    pub state_dim: usize,
    pub difficulty: f64,
    pub spd_margin: f64,
    pub bellman_margin: f64,
    pub boundedness_margin: f64,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyHistogram {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub master_seed: u64,
    pub requested: usize,
    pub generated: usize,
    pub attempts: usize,
    pub per_family: BTreeMap<String, usize>,
    /// Failures per reason; one attempt can fail several checks.
    pub rejections: BTreeMap<String, usize>,
    pub rejected: Vec<Rejection>,
    pub difficulty: Option<DifficultyHistogram>,
    pub fixtures: Vec<FixtureSummary>,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub fixtures: Vec<Fixture>,
    pub summary: DatasetSummary,
}

/// Builds and validates one fixture, retrying with fresh seeds up to the
/// budget.
pub fn generate_fixture(
    config: &DatasetConfig,
    source: &InstanceSource,
    index: usize,
    exec: Execution,
) -> Result<(Fixture, Vec<Rejection>)> {
    let mut rejected = Vec::new();
    for attempt in 0..config.retry_budget {
        let seed = derive_seed(config.master_seed, &[TAG_SAMPLE, index as u64, attempt as u64]);
        let reject = |reasons: Vec<String>| Rejection {
            index,
            attempt,
            seed,
            reasons,
        };
        let params = match source {
            InstanceSource::Sampled { ranges } => match ranges.sample(&mut stream_rng(seed, &[])) {
                Ok(p) => p,
                Err(e) => {
                    rejected.push(reject(vec![format!("sampling: {e}")]));
                    continue;
                }
            },
            InstanceSource::Fixed { params } => params.clone(),
        };
        let built = match params.build() {
            Ok(b) => b,
            Err(e) => {
                rejected.push(reject(vec![format!("build: {e}")]));
                continue;
            }
        };
        let validation_seed = derive_seed(seed, &[TAG_SAMPLE]);
        let trace = match validate_instance(&built.instance, &config.validation, validation_seed, exec) {
            Ok(t) => t,
            Err(e) => {
                rejected.push(reject(vec![format!("numerics: {e}")]));
                continue;
            }
        };
        if !trace.passed() {
            rejected.push(reject(trace.failures().iter().map(|s| s.to_string()).collect()));
            continue;
        }
        let schedule_seed = derive_seed(seed, &[TAG_SCHEDULE]);
        let fixture = Fixture {
            format_version: FORMAT_VERSION,
            family: params.family(),
            index,
            difficulty: params.difficulty(&config.difficulty_weights),
            difficulty_weights: config.difficulty_weights,
            instance: built.instance.into_params(),
            tuning: built.tuning,
            params,
            seeds: FixtureSeeds {
                generation: seed,
                noise: derive_seed(seed, &[TAG_NOISE]),
                schedule: schedule_seed,
                validation: validation_seed,
            },
            schedule: InitialStateSchedule::random(schedule_seed, config.validation.half_width),
            horizon: config.horizon,
            action_bound: config.action_bound,
            validation: trace,
        };
        return Ok((fixture, rejected));
    }
    Err(Error::RetryBudgetExhausted {
        family: source.family_name().to_string(),
        index,
        attempts: config.retry_budget,
    })
}

fn histogram(values: &[f64], bins: usize) -> Option<DifficultyHistogram> {
    if values.is_empty() {
        return None;
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let bins = if max > min { bins } else { 1 };
    let width = (max - min) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { max } else { min + width * i as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for v in values {
        let i = if width > 0.0 { ((v - min) / width) as usize } else { 0 };
        counts[i.min(bins - 1)] += 1;
    }
    Some(DifficultyHistogram {
        min,
        max,
        mean,
        edges,
        counts,
    })
}

/// Generates every fixture of `config` in memory. Fixtures are independent
/// and built in parallel; the result is the same for either execution mode.
pub fn generate_fixtures(config: &DatasetConfig, exec: Execution) -> Result<GeneratedDataset> {
    config.check()?;
    let jobs: Vec<&InstanceSource> = config
        .entries
        .iter()
        .flat_map(|e| std::iter::repeat_n(&e.source, e.count))
        .collect();
    let outcomes = try_map_indexed(exec, jobs.len(), |i| generate_fixture(config, jobs[i], i, exec))?;

    let mut fixtures = Vec::with_capacity(outcomes.len());
    let mut rejected = Vec::new();
    for (fixture, r) in outcomes {
        fixtures.push(fixture);
        rejected.extend(r);
    }

    let mut per_family = BTreeMap::new();
    let mut summaries = Vec::with_capacity(fixtures.len());
    for f in &fixtures {
        *per_family.entry(f.family.to_string()).or_insert(0) += 1;
        summaries.push(FixtureSummary {
            file: f.file_name(),
            family: f.family.to_string(),
            index: f.index,
            seed: f.seeds.generation,
            state_dim: f.instance.value_form.dim(),
            difficulty: f.difficulty,
            spd_margin: f.validation.spd.margin,
            bellman_margin: f.validation.bellman.margin,
            boundedness_margin: f.validation.bounded.margin,
            checksum: f.checksum()?,
        });
    }
    let mut rejections = BTreeMap::new();
    for r in &rejected {
        for reason in &r.reasons {
            let key = reason.split(':').next().unwrap_or(reason).to_string();
            *rejections.entry(key).or_insert(0) += 1;
        }
    }
    let difficulties: Vec<f64> = fixtures.iter().map(|f| f.difficulty).collect();

    let summary = DatasetSummary {
        master_seed: config.master_seed,
        requested: config.total(),
        generated: fixtures.len(),
        attempts: fixtures.len() + rejected.len(),
        per_family,
        rejections,
        rejected,
        difficulty: histogram(&difficulties, config.histogram_bins),
        fixtures: summaries,
    };
    Ok(GeneratedDataset { fixtures, summary })
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Writes every fixture plus `summary.json` into `dir`.
pub fn write_dataset(dataset: &GeneratedDataset, dir: &Path) -> Result<()> {
    for f in &dataset.fixtures {
        write_atomic(&dir.join(f.file_name()), f.to_yaml()?.as_bytes())?;
    }
    let mut json = serde_json::to_string_pretty(&dataset.summary).map_err(|e| Error::Parse(e.to_string()))?;
    json.push('\n');
    write_atomic(&dir.join(SUMMARY_FILE), json.as_bytes())
}

pub fn generate_dataset(config: &DatasetConfig, dir: &Path, exec: Execution) -> Result<DatasetSummary> {
    let dataset = generate_fixtures(config, exec)?;
    write_dataset(&dataset, dir)?;
    Ok(dataset.summary)
}
