use std::path::PathBuf;

use morphome_numcore::NumError;

use crate::corpus::VerbClass;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{source_name}:{line}: {msg}")]
    Parse { source_name: String, line: usize, msg: String },
    #[error("{source_name}:{line}: duplicate cell {cell} for lemma {lemma}")]
    DuplicateCell { source_name: String, line: usize, lemma: String, cell: String },
    #[error("insufficient pool: need {needed} {class} lemmas, only {available} available")]
    InsufficientPool { class: VerbClass, needed: usize, available: usize },
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("character {0:?} is not in the vocabulary")]
    UnknownChar(char),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds max_len {max}")]
    Overlength { len: usize, max: usize },
    #[error("feature vector has width {got}, model expects {expected}")]
    FeatureWidth { got: usize, expected: usize },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64, loss_trace: Vec<f64>, dev_trace: Vec<(usize, f64)> },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}
