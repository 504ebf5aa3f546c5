//! Files written by the commands and the manifest that indexes them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use outreach::{DistributionEntry, LetterDistribution, Mode, ProblemInstance, RNG_NAME};

use crate::config::RunConfig;

/// Serialized distribution, tied to its instance by digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFile {
    pub method: String,
    pub t: usize,
    pub letters: u64,
    pub instance_digest: String,
    /// City ids in the instance's ascending order; `letters` vectors follow it.
    pub city_ids: Vec<String>,
    pub mode: Mode,
    pub entries: Vec<DistributionEntry>,
}

impl DistributionFile {
    pub fn new(method: &str, instance: &ProblemInstance, dist: &LetterDistribution) -> Self {
        DistributionFile {
            method: method.to_string(),
            t: instance.budget(),
            letters: instance.letters(),
            instance_digest: instance.digest(),
            city_ids: instance.cities().iter().map(|c| c.id.clone()).collect(),
            mode: dist.mode(),
            entries: dist.entries().to_vec(),
        }
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading distribution {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing distribution {}", path.display()))
    }

    pub fn distribution(&self) -> anyhow::Result<LetterDistribution> {
        if self
            .entries
            .iter()
            .any(|e| e.allocation.len() != self.city_ids.len())
        {
            anyhow::bail!(
                "distribution entries do not match the {} listed cities",
                self.city_ids.len()
            );
        }
        Ok(LetterDistribution::new(self.entries.clone(), self.mode)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub rng: &'static str,
    pub seed: u64,
    pub instance_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roster_digest: Option<String>,
    pub config: RunConfig,
    pub artifacts: Vec<ArtifactRecord>,
}

/// Writes artifacts into one directory, recording their hashes.
pub struct OutputDir {
    root: PathBuf,
    records: Vec<ArtifactRecord>,
}

impl OutputDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, content: &str) -> anyhow::Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        self.records.push(ArtifactRecord {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(content.as_bytes())),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn finish(mut self, mut manifest: Manifest) -> anyhow::Result<()> {
        manifest.artifacts = std::mem::take(&mut self.records);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn manifest(
    command: &str,
    cfg: &RunConfig,
    instance: &ProblemInstance,
    roster_digest: Option<String>,
) -> Manifest {
    Manifest {
        tool: "outreach",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        rng: RNG_NAME,
        seed: cfg.seed,
        instance_digest: instance.digest(),
        roster_digest,
        config: cfg.clone(),
        artifacts: Vec::new(),
    }
}
