//! Output layout, atomic writes and run bookkeeping.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use morphome::encoding::ArchVariant;
use morphome::train::{RunLedger, RunSpec, RunSummary};
use serde::{Deserialize, Serialize};

use crate::config::condition_dir;

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{}.{}.tmp", name, std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Paths under the output root.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn paradigms(&self) -> PathBuf {
        self.data_dir().join("paradigms.tsv")
    }

    pub fn suffixes(&self) -> PathBuf {
        self.data_dir().join("suffixes.tsv")
    }

    pub fn wug_items(&self) -> PathBuf {
        self.data_dir().join("wug_stimuli.tsv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn condition(&self, c: f64) -> PathBuf {
        self.root.join(condition_dir(c))
    }

    pub fn split(&self, c: f64, seed: u64) -> PathBuf {
        self.condition(c).join("splits").join(format!("split_{}.json", seed))
    }

    /// Instance files shared by every variant of a run.
    pub fn run_data(&self, c: f64, run_id: &str) -> PathBuf {
        self.condition(c).join("data").join(run_id)
    }

    pub fn run_dir(&self, c: f64, variant: ArchVariant, run_id: &str) -> PathBuf {
        self.condition(c).join(variant.name()).join(run_id)
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// Stored next to each trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub base_seed: u64,
    pub train_seed: u64,
    pub summary: RunSummary,
}

/// A run is complete when its `run.json` exists with the current config hash.
pub struct ManifestLedger<'a> {
    pub layout: &'a Layout,
    pub config_hash: String,
    pub base_seed: u64,
}

impl ManifestLedger<'_> {
    pub fn record_path(&self, spec: &RunSpec) -> PathBuf {
        self.layout.run_dir(spec.split.condition, spec.variant, &spec.run_id()).join("run.json")
    }
}

impl RunLedger for ManifestLedger<'_> {
    fn is_complete(&self, spec: &RunSpec) -> bool {
        read_json::<RunRecord>(&self.record_path(spec)).is_ok_and(|r| r.config_hash == self.config_hash)
    }

    fn record(&mut self, summary: &RunSummary) -> morphome::Result<()> {
        let record = RunRecord {
            config_hash: self.config_hash.clone(),
            base_seed: self.base_seed,
            train_seed: summary.train_seed,
            summary: summary.clone(),
        };
        write_json(&self.record_path(&summary.spec), &record).map_err(|e| morphome::Error::Config(format!("{:#}", e)))
    }
}
