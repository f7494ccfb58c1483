//! Fixture files: one validated instance per YAML document.
//!
//! The first line is `checksum: "sha256:<hex>"`, a digest of every byte that
//! follows it. The rest is the serialized [`Fixture`]. Floats are written in
//! shortest round-trip form, so the instance rebuilt on import is
//! bit-identical to the one that was validated.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::validate::ValidationTrace;
use crate::error::{Error, Result};
use crate::families::{DifficultyWeights, Family, FamilyParams, InstabilityTuning};
use crate::qg::{QgInstance, QgParams};
use crate::sim::{InitialStateSchedule, NoiseStream};

pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_PREFIX: &str = "checksum: \"sha256:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSeeds {
    /// Seed the parameters ψ were drawn from.
    pub generation: u64,
    pub noise: u64,
    pub schedule: u64,
    pub validation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub format_version: u32,
    pub family: Family,
    pub index: usize,
    /// The sampled family parameters ψ.
    pub params: FamilyParams,
    /// The resolved instance recipe the oracle is rebuilt from.
    pub instance: QgParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<InstabilityTuning>,
    pub seeds: FixtureSeeds,
    pub schedule: InitialStateSchedule,
    /// Default evaluation horizon.
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_bound: Option<f64>,
    pub difficulty: f64,
    pub difficulty_weights: DifficultyWeights,
    pub validation: ValidationTrace,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn digest(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

impl Fixture {
    pub fn build_instance(&self) -> Result<QgInstance> {
        QgInstance::new(self.instance.clone())
    }

    pub fn noise_stream(&self) -> Result<NoiseStream> {
        NoiseStream::new(self.seeds.noise, &self.instance.noise_cov)
    }

    pub fn file_name(&self) -> String {
        format!("{}_{:04}_{}.yaml", self.family, self.index, self.seeds.generation)
    }

    /// The full file contents, checksum line included.
    pub fn to_yaml(&self) -> Result<String> {
        let body = serde_yaml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(format!("{CHECKSUM_PREFIX}{}\"\n{body}", digest(&body)))
    }

    /// `sha256:<hex>` of the serialized body.
    pub fn checksum(&self) -> Result<String> {
        let body = serde_yaml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(format!("sha256:{}", digest(&body)))
    }

    pub fn from_yaml(text: &str) -> Result<Self> {
        let (first, body) = text.split_once('\n').ok_or(Error::ChecksumMismatch)?;
        let stored = first
            .strip_prefix(CHECKSUM_PREFIX)
            .and_then(|rest| rest.strip_suffix('"'))
            .ok_or(Error::ChecksumMismatch)?;
        if stored != digest(body) {
            return Err(Error::ChecksumMismatch);
        }
        let probe: VersionProbe = serde_yaml::from_str(body).map_err(|e| Error::Parse(e.to_string()))?;
        if probe.format_version != FORMAT_VERSION {
            return Err(Error::SchemaVersionMismatch {
                found: probe.format_version,
                expected: FORMAT_VERSION,
            });
        }
        serde_yaml::from_str(body).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Recomputes the checksum line after `body` was edited by hand or by a
    /// tool. Only for tests and tooling that deliberately alter fixtures.
    pub fn reseal(text: &str) -> Result<String> {
        let (_, body) = text.split_once('\n').ok_or(Error::ChecksumMismatch)?;
        Ok(format!("{CHECKSUM_PREFIX}{}\"\n{body}", digest(body)))
    }
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path` once fully written.
pub fn export_fixture(fixture: &Fixture, path: &Path) -> Result<()> {
    write_atomic(path, fixture.to_yaml()?.as_bytes())
}

pub fn import_fixture(path: &Path) -> Result<Fixture> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Fixture::from_yaml(&text)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
