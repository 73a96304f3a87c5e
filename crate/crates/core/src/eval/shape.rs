use serde::{Deserialize, Serialize};

use super::metrics::{stem_correct, PredictionRecord, StemMode};
use crate::corpus::{CellTag, SuffixTable};
use crate::error::{Error, Result};

/// Keeps L-cell scores and inverts the rest, so that a high value always means
/// the L stem was produced.
pub fn transform(cell: CellTag, raw: f64) -> f64 {
    if cell.is_l_cell() {
        raw
    } else {
        1.0 - raw
    }
}

/// Mean stem accuracy per cell, indexed by [`CellTag::index`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellScores {
    pub raw: [Option<f64>; 12],
    pub counts: [usize; 12],
}

impl CellScores {
    pub fn raw(&self, cell: CellTag) -> Option<f64> {
        self.raw[cell.index()]
    }

    pub fn transformed(&self, cell: CellTag) -> Option<f64> {
        self.raw(cell).map(|r| transform(cell, r))
    }

    /// Cells without records; these are left out of clustering.
    pub fn missing(&self) -> Vec<CellTag> {
        CellTag::ALL.into_iter().filter(|c| self.raw(*c).is_none()).collect()
    }

    /// Transformed scores of the cells that have records.
    pub fn clustering_input(&self) -> Vec<(CellTag, f64)> {
        CellTag::ALL.into_iter().filter_map(|c| self.transformed(c).map(|t| (c, t))).collect()
    }

    /// Per-cell mean over runs, skipping runs where the cell is missing.
    pub fn mean(runs: &[CellScores]) -> CellScores {
        let mut raw = [None; 12];
        let mut counts = [0; 12];
        for (i, slot) in raw.iter_mut().enumerate() {
            let present: Vec<f64> = runs.iter().filter_map(|r| r.raw[i]).collect();
            if !present.is_empty() {
                *slot = Some(present.iter().sum::<f64>() / present.len() as f64);
            }
            counts[i] = runs.iter().map(|r| r.counts[i]).sum();
        }
        CellScores { raw, counts }
    }
}

/// Raw per-cell stem accuracy over all records regardless of verb class.
pub fn paradigm_shape(records: &[PredictionRecord], table: &SuffixTable, mode: StemMode) -> CellScores {
    let mut correct = [0usize; 12];
    let mut counts = [0usize; 12];
    for r in records {
        let i = r.tgt_tag.index();
        counts[i] += 1;
        correct[i] += stem_correct(r, table, mode).0 as usize;
    }
    let mut raw = [None; 12];
    for i in 0..12 {
        if counts[i] > 0 {
            raw[i] = Some(correct[i] as f64 / counts[i] as f64);
        }
    }
    CellScores { raw, counts }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cluster {
    L,
    NL,
}

impl std::fmt::Display for Cluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Cluster::L => "L",
            Cluster::NL => "NL",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// In input order.
    pub cells: Vec<(CellTag, Cluster)>,
    /// All scores were identical, so only one cluster exists.
    pub degenerate: bool,
    /// Mean score of the L cluster, then of the NL cluster (NaN when empty).
    pub centroids: (f64, f64),
}

impl ClusterAssignment {
    pub fn of(&self, cell: CellTag) -> Option<Cluster> {
        self.cells.iter().find(|(c, _)| *c == cell).map(|(_, k)| *k)
    }
}

fn sse(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-means clustering of cell scores.
///
/// In one dimension an optimal two-partition splits the sorted scores at one
/// point, so every split between distinct values is scored and the one with
/// the least within-cluster squared error is kept (first wins on ties). The
/// upper group is the L cluster. Identical scores give one cluster, labelled L
/// when the shared score is at least 0.5.
pub fn kmeans_cells(scores: &[(CellTag, f64)]) -> Result<ClusterAssignment> {
    if scores.is_empty() {
        return Err(Error::Config("no cell scores to cluster".into()));
    }
    if let Some((c, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Config(format!("score for {} is not finite: {}", c, s)));
    }
    let mut sorted: Vec<f64> = scores.iter().map(|s| s.1).collect();
    sorted.sort_by(f64::total_cmp);
    let mut best: Option<(f64, usize)> = None;
    for cut in 1..sorted.len() {
        if sorted[cut - 1] == sorted[cut] {
            continue;
        }
        let cost = sse(&sorted[..cut]) + sse(&sorted[cut..]);
        if best.is_none_or(|(b, _)| cost < b) {
            best = Some((cost, cut));
        }
    }
    let Some((_, cut)) = best else {
        let label = if sorted[0] >= 0.5 { Cluster::L } else { Cluster::NL };
        let centroids = if label == Cluster::L { (sorted[0], f64::NAN) } else { (f64::NAN, sorted[0]) };
        return Ok(ClusterAssignment { cells: scores.iter().map(|(c, _)| (*c, label)).collect(), degenerate: true, centroids });
    };
    let threshold = sorted[cut];
    Ok(ClusterAssignment {
        cells: scores.iter().map(|&(c, s)| (c, if s >= threshold { Cluster::L } else { Cluster::NL })).collect(),
        degenerate: false,
        centroids: (mean(&sorted[cut..]), mean(&sorted[..cut])),
    })
}

/// Cells whose cluster differs from the one a perfect L-shape predicts.
pub fn compare_expected(assignment: &ClusterAssignment) -> Vec<CellTag> {
    assignment
        .cells
        .iter()
        .filter(|(cell, k)| (*k == Cluster::L) != cell.is_l_cell())
        .map(|(cell, _)| *cell)
        .collect()
}
