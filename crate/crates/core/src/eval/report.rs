use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub variant: String,
    pub condition: String,
    pub run: String,
    pub metric: String,
    pub group: String,
    /// Empty for a group without records.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub variant: String,
    pub condition: String,
    pub cell: String,
    pub raw: Option<f64>,
    pub transformed: Option<f64>,
    pub cluster: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WugRow {
    pub variant: String,
    pub condition: String,
    pub matcher: String,
    pub cell: String,
    pub model_acc: Option<f64>,
    pub human_acc: Option<f64>,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Config(format!("csv: {:?}", other)),
    }
}

/// Serializes rows with a header line.
pub fn write_csv<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::File { path: path.to_path_buf(), source },
        other => Error::Config(format!("{}: {:?}", path.display(), other)),
    })?;
    r.deserialize().map(|row| row.map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))).collect()
}
