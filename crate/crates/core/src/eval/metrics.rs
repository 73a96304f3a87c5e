use serde::{Deserialize, Serialize};

use crate::corpus::phon::{relaxed, strip_stress};
use crate::corpus::{CellTag, ConjClass, SuffixTable, VerbClass};
use crate::error::{Error, Result};

/// One decoded test instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub lemma: String,
    pub verb_class: VerbClass,
    pub conj_class: ConjClass,
    pub src_tags: [CellTag; 2],
    pub tgt_tag: CellTag,
    pub gold: String,
    pub prediction: String,
    pub log_prob: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    Overall,
    VerbClass,
}

/// How extracted stems are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemMode {
    /// Equal after removing stress marks.
    #[default]
    Strict,
    /// Equal after [`relaxed`] normalization.
    Relaxed,
}

impl StemMode {
    pub fn key(self, stem: &str) -> String {
        match self {
            StemMode::Strict => strip_stress(stem),
            StemMode::Relaxed => relaxed(stem),
        }
    }
}

/// Accuracy within one group. `accuracy` is `None` for a group with no records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

fn grouped(records: &[PredictionRecord], group_by: GroupBy, correct: impl Fn(&PredictionRecord) -> bool) -> Result<Vec<GroupAccuracy>> {
    if records.is_empty() {
        return Err(Error::Config("no prediction records".into()));
    }
    let groups: Vec<(String, Option<VerbClass>)> = match group_by {
        GroupBy::Overall => vec![("overall".into(), None)],
        GroupBy::VerbClass => vec![("L".into(), Some(VerbClass::L)), ("NL".into(), Some(VerbClass::NL))],
    };
    Ok(groups
        .into_iter()
        .map(|(group, class)| {
            let members = records.iter().filter(|r| class.is_none_or(|c| r.verb_class == c));
            let (total, correct) = members.fold((0, 0), |(t, c), r| (t + 1, c + correct(r) as usize));
            GroupAccuracy { group, total, correct, accuracy: (total > 0).then(|| correct as f64 / total as f64) }
        })
        .collect())
}

/// Exact full-form matches.
pub fn sequence_accuracy(records: &[PredictionRecord], group_by: GroupBy) -> Result<Vec<GroupAccuracy>> {
    grouped(records, group_by, |r| r.prediction == r.gold)
}

/// Whether the prediction's stem equals the gold stem, both cut with the
/// target cell's suffixes. The second value is false when the gold form
/// matched no suffix of its conjugation class.
pub fn stem_correct(r: &PredictionRecord, table: &SuffixTable, mode: StemMode) -> (bool, bool) {
    let gold = table.extract_stem(&r.gold, r.tgt_tag, r.conj_class);
    let pred = table.extract_stem(&r.prediction, r.tgt_tag, r.conj_class);
    (mode.key(&gold.stem) == mode.key(&pred.stem), gold.matched())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StemReport {
    pub groups: Vec<GroupAccuracy>,
    /// Records whose gold form had no matching suffix.
    pub unmatched: usize,
}

pub fn stem_accuracy(records: &[PredictionRecord], table: &SuffixTable, group_by: GroupBy, mode: StemMode) -> Result<StemReport> {
    let groups = grouped(records, group_by, |r| stem_correct(r, table, mode).0)?;
    let unmatched = records.iter().filter(|r| !stem_correct(r, table, mode).1).count();
    Ok(StemReport { groups, unmatched })
}

const RECORD_HEADER: &str = "lemma\tverb_class\tconj_class\tsrc1_tag\tsrc2_tag\ttgt_tag\tgold\tprediction\tlog_prob";

pub fn records_to_tsv(records: &[PredictionRecord]) -> String {
    let mut s = format!("{}\n", RECORD_HEADER);
    for r in records {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.lemma, r.verb_class, r.conj_class, r.src_tags[0], r.src_tags[1], r.tgt_tag, r.gold, r.prediction, r.log_prob
        ));
    }
    s
}

pub fn parse_records(text: &str, source_name: &str) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let perr = |msg: String| Error::Parse { source_name: source_name.to_string(), line: i + 1, msg };
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || (i == 0 && row == RECORD_HEADER) {
            continue;
        }
        let c: Vec<&str> = row.split('\t').collect();
        if c.len() != 9 {
            return Err(perr(format!("expected 9 columns, found {}", c.len())));
        }
        let tag = |s: &str| s.parse::<CellTag>().map_err(|e| perr(e.to_string()));
        out.push(PredictionRecord {
            lemma: c[0].to_string(),
            verb_class: c[1].parse().map_err(perr)?,
            conj_class: c[2].parse().map_err(|e: String| perr(e))?,
            src_tags: [tag(c[3])?, tag(c[4])?],
            tgt_tag: tag(c[5])?,
            gold: c[6].to_string(),
            prediction: c[7].to_string(),
            log_prob: c[8].parse().map_err(|e| perr(format!("log_prob: {}", e)))?,
        });
    }
    Ok(out)
}
