use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use morphome::corpus::{AlternationSpec, CONDITIONS};
use morphome::encoding::{ArchVariant, Vocab};
use morphome::model::ModelConfig;
use morphome::train::{GridConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Architecture hyperparameters shared by every variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub tag_pe: bool,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape { layers: 4, heads: 4, d_model: 256, d_ff: 1024, max_len: 64, tag_pe: true }
    }
}

impl ModelShape {
    pub fn config(&self, variant: ArchVariant, vocab: &Vocab, dropout: f64) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            dropout,
            max_len: self.max_len,
            vocab_size: vocab.size(),
            out_vocab: vocab.output_size(),
            variant,
            tag_pe: self.tag_pe,
        }
    }
}

/// Generated corpus used instead of a paradigm file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_l: usize,
    pub n_nl: usize,
    pub seed: u64,
    pub wug_verbs: usize,
    pub spec: AlternationSpec,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { n_l: 400, n_nl: 400, seed: 0, wug_verbs: 15, spec: AlternationSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Paradigm TSV; required unless the synthetic corpus is used.
    pub paradigms: Option<PathBuf>,
    /// Suffix table TSV; the built-in table when absent.
    pub suffixes: Option<PathBuf>,
    pub wug_stimuli: Option<PathBuf>,
    pub human_responses: Option<PathBuf>,
    pub conditions: Vec<f64>,
    pub variants: Vec<ArchVariant>,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub output_dir: PathBuf,
    pub base_seed: u64,
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            paradigms: None,
            suffixes: None,
            wug_stimuli: None,
            human_responses: None,
            conditions: CONDITIONS.to_vec(),
            variants: ArchVariant::ALL.to_vec(),
            model: ModelShape::default(),
            train: TrainConfig::default(),
            grid: GridConfig::default(),
            output_dir: PathBuf::from("outputs"),
            base_seed: 0,
            synthetic: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config. Relative data paths resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paradigms, &mut cfg.suffixes, &mut cfg.wug_stimuli, &mut cfg.human_responses].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.synthetic.is_none() && self.paradigms.is_none() {
            bail!("config names no paradigm file; set \"paradigms\" or use --synthetic");
        }
        let files = [&self.paradigms, &self.suffixes, &self.wug_stimuli, &self.human_responses];
        for p in files.into_iter().flatten() {
            if self.synthetic.is_some() && Some(p) == self.paradigms.as_ref() {
                continue;
            }
            if !p.exists() {
                bail!("{} does not exist", p.display());
            }
        }
        if self.conditions.is_empty() || self.variants.is_empty() {
            bail!("config needs at least one condition and one variant");
        }
        for &c in &self.conditions {
            if !(0.0..=1.0).contains(&c) {
                bail!("condition {} is not a fraction", c);
            }
        }
        self.train.validate()?;
        if self.model.heads == 0 || self.model.d_model % self.model.heads != 0 {
            bail!("d_model must be a positive multiple of heads");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_bytes(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Directory name of a condition, e.g. `10L` for 0.10.
pub fn condition_dir(c: f64) -> String {
    let pct = c * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}L", pct.round() as i64)
    } else {
        format!("{}L", pct)
    }
}
