//! Sequence and stem accuracy, per-cell paradigm shape with two-way
//! clustering, and nonce-verb evaluation.

mod metrics;
mod predict;
mod report;
mod shape;
mod wug;

pub use metrics::{
    records_to_tsv, parse_records, sequence_accuracy, stem_accuracy, stem_correct, GroupAccuracy, GroupBy, PredictionRecord, StemMode,
    StemReport,
};
pub use predict::{predict_records, ModelPredictor, Prediction, Predictor, Query};
pub use report::{read_csv, write_csv, AccuracyRow, CellRow, WugRow};
pub use shape::{compare_expected, kmeans_cells, paradigm_shape, transform, CellScores, Cluster, ClusterAssignment};
pub use wug::{
    human_cell_means, load_human_responses, load_wug_items, parse_human_responses, parse_wug_items, synthesize_wug_items, wug_evaluate,
    wug_score, wug_items_to_tsv, HumanResponse, WugItem, WugMatcher, WugResult, WUG_TARGETS,
};
