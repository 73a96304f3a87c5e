use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::StemMode;
use super::predict::{Predictor, Query};
use crate::corpus::{AlternationSpec, CellTag, ConjClass, Mood, Number, Person, Source, SuffixTable};
use crate::error::{read_file, Error, Result};

/// The three cells probed with nonce verbs.
pub const WUG_TARGETS: [CellTag; 3] = [
    CellTag { mood: Mood::Ind, person: Person::First, number: Number::Sg },
    CellTag { mood: Mood::Sbjv, person: Person::Second, number: Number::Sg },
    CellTag { mood: Mood::Sbjv, person: Person::Third, number: Number::Sg },
];

/// One nonce-verb test item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WugItem {
    pub lemma: String,
    pub conj_class: ConjClass,
    /// Sources in presentation order.
    pub src1: Source,
    pub src2: Source,
    pub tgt_tag: CellTag,
    /// The stem an L-shaped generalization produces in `tgt_tag`.
    pub expected_stem: String,
    /// True for the reversed presentation of a stimulus row.
    pub swapped: bool,
}

impl WugItem {
    pub fn expected_form(&self, table: &SuffixTable) -> Option<String> {
        table.candidates(self.conj_class, self.tgt_tag).first().map(|s| format!("{}{}", self.expected_stem, s))
    }

    pub fn query(&self) -> Query {
        Query { src1: self.src1.clone(), src2: self.src2.clone(), tgt_tag: self.tgt_tag }
    }
}

fn parse_cell(s: &str) -> std::result::Result<CellTag, String> {
    s.parse::<CellTag>().or_else(|e| CellTag::ALL.into_iter().find(|c| c.label() == s.trim()).ok_or_else(|| e.to_string()))
}

const STIMULUS_HEADER: &str = "lemma\tconj_class\tsrc1_form\tsrc1_tag\tsrc2_form\tsrc2_tag\ttgt_tag\texpected_stem";

/// Reads stimulus rows. Each row yields two items, one per source ordering.
///
/// The target must be one of [`WUG_TARGETS`] and the expected stem must be the
/// stem of one of the two sources.
pub fn parse_wug_items(text: &str, source_name: &str, table: &SuffixTable) -> Result<Vec<WugItem>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let perr = |msg: String| Error::Parse { source_name: source_name.to_string(), line: i + 1, msg };
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || row.starts_with('#') || (i == 0 && row.starts_with("lemma\t")) {
            continue;
        }
        let c: Vec<&str> = row.split('\t').map(str::trim).collect();
        if c.len() != 8 {
            return Err(perr(format!("expected 8 columns, found {}", c.len())));
        }
        let conj_class: ConjClass = c[1].parse().map_err(perr)?;
        let src1 = Source::new(c[2], parse_cell(c[3]).map_err(perr)?);
        let src2 = Source::new(c[4], parse_cell(c[5]).map_err(perr)?);
        let tgt_tag = parse_cell(c[6]).map_err(perr)?;
        if !WUG_TARGETS.contains(&tgt_tag) {
            return Err(perr(format!("target {} is not a tested cell", tgt_tag.label())));
        }
        if src1.tag == src2.tag || tgt_tag == src1.tag || tgt_tag == src2.tag {
            return Err(perr("source and target cells must be distinct".into()));
        }
        let expected_stem = c[7].to_string();
        let stems = [&src1, &src2].map(|s| StemMode::Strict.key(&table.stem(&s.form, s.tag, conj_class)));
        if !stems.contains(&StemMode::Strict.key(&expected_stem)) {
            return Err(perr(format!("expected stem {} is neither source stem ({} / {})", expected_stem, stems[0], stems[1])));
        }
        let item = WugItem { lemma: c[0].to_string(), conj_class, src1, src2, tgt_tag, expected_stem, swapped: false };
        let flipped = WugItem { src1: item.src2.clone(), src2: item.src1.clone(), swapped: true, ..item.clone() };
        out.push(item);
        out.push(flipped);
    }
    Ok(out)
}

pub fn load_wug_items(path: &Path, table: &SuffixTable) -> Result<Vec<WugItem>> {
    parse_wug_items(&read_file(path)?, &path.display().to_string(), table)
}

/// Stimulus rows for the unswapped items.
pub fn wug_items_to_tsv(items: &[WugItem]) -> String {
    let mut s = format!("{}\n", STIMULUS_HEADER);
    for i in items.iter().filter(|i| !i.swapped) {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            i.lemma, i.conj_class, i.src1.form, i.src1.tag, i.src2.form, i.src2.tag, i.tgt_tag, i.expected_stem
        ));
    }
    s
}

/// Fricative stems paired with the stop a novel alternation substitutes.
const ALTERNATIONS: [(&str, &str); 3] = [("s", "t"), ("f", "p"), ("x", "k")];

/// Nonce verbs whose stem-final fricative alternates with a stop. The first
/// source is 3SG.IND with the fricative stem, the second 1PL.SBJV with the
/// stop stem, which is also the expected stem in every target.
pub fn synthesize_wug_items(n_verbs: usize, spec: &AlternationSpec, avoid: &HashSet<String>, seed: u64) -> Result<Vec<WugItem>> {
    let class = *spec.classes.first().ok_or_else(|| Error::Config("alternation spec has no conjugation classes".into()))?;
    let ending = |cell: CellTag| -> Result<&str> {
        spec.suffixes
            .candidates(class, cell)
            .first()
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("suffix table has no ending for {} {}", class, cell)))
    };
    let given_nl: CellTag = "V;IND;PRS;3;SG".parse().expect("valid tag");
    let given_l: CellTag = "V;SBJV;PRS;1;PL".parse().expect("valid tag");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = avoid.clone();
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < n_verbs * 6 {
        attempts += 1;
        if attempts > 1000 * (n_verbs + 10) {
            return Err(Error::Config(format!("cannot draw {} distinct nonce verbs", n_verbs)));
        }
        let mut base = String::new();
        for _ in 0..rng.gen_range(1..=spec.max_syllables.max(1)) {
            base.push_str(spec.onsets.choose(&mut rng).ok_or_else(|| Error::Config("no onsets".into()))?);
            base.push_str(spec.vowels.choose(&mut rng).ok_or_else(|| Error::Config("no vowels".into()))?);
        }
        let (fric, stop) = ALTERNATIONS[out.len() / 6 % ALTERNATIONS.len()];
        let (nl_stem, l_stem) = (format!("{}{}", base, fric), format!("{}{}", base, stop));
        let lemma = format!("{}{}", nl_stem, class.infinitive_ending());
        if !seen.insert(lemma.clone()) || avoid.contains(&format!("{}{}", l_stem, class.infinitive_ending())) {
            continue;
        }
        let src1 = Source::new(format!("{}{}", nl_stem, ending(given_nl)?), given_nl);
        let src2 = Source::new(format!("{}{}", l_stem, ending(given_l)?), given_l);
        for tgt_tag in WUG_TARGETS {
            let item = WugItem { lemma: lemma.clone(), conj_class: class, src1: src1.clone(), src2: src2.clone(), tgt_tag, expected_stem: l_stem.clone(), swapped: false };
            let flipped = WugItem { src1: src2.clone(), src2: src1.clone(), swapped: true, ..item.clone() };
            out.push(item);
            out.push(flipped);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WugMatcher {
    ExactForm,
    Stem,
    StemRelaxed,
}

impl WugMatcher {
    pub const ALL: [WugMatcher; 3] = [WugMatcher::ExactForm, WugMatcher::Stem, WugMatcher::StemRelaxed];

    pub fn name(self) -> &'static str {
        match self {
            WugMatcher::ExactForm => "exact_form",
            WugMatcher::Stem => "stem",
            WugMatcher::StemRelaxed => "stem_relaxed",
        }
    }

    /// Whether `produced` counts as the expected response to `item`.
    pub fn correct(self, item: &WugItem, produced: &str, table: &SuffixTable) -> bool {
        let stem = |mode: StemMode| mode.key(&table.stem(produced, item.tgt_tag, item.conj_class)) == mode.key(&item.expected_stem);
        match self {
            WugMatcher::ExactForm => item.expected_form(table).is_some_and(|f| f == produced),
            WugMatcher::Stem => stem(StemMode::Strict),
            WugMatcher::StemRelaxed => stem(StemMode::Relaxed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WugResult {
    pub matcher: WugMatcher,
    pub items: usize,
    pub overall: f64,
    /// Mean per target cell, in [`WUG_TARGETS`] order; `None` without items.
    pub per_cell: Vec<(CellTag, Option<f64>)>,
    /// Means for the given and the swapped ordering.
    pub per_order: [Option<f64>; 2],
}

fn mean_of(hits: impl Iterator<Item = bool>) -> Option<f64> {
    let (n, k) = hits.fold((0usize, 0usize), |(n, k), h| (n + 1, k + h as usize));
    (n > 0).then(|| k as f64 / n as f64)
}

/// Scores already decoded forms, one per item.
pub fn wug_score(items: &[WugItem], produced: &[String], table: &SuffixTable, matcher: WugMatcher) -> Result<WugResult> {
    if items.is_empty() || items.len() != produced.len() {
        return Err(Error::Config(format!("{} wug items but {} predictions", items.len(), produced.len())));
    }
    let hits: Vec<bool> = items.iter().zip(produced).map(|(i, p)| matcher.correct(i, p, table)).collect();
    let select = |f: &dyn Fn(&WugItem) -> bool| mean_of(items.iter().zip(&hits).filter(|(i, _)| f(i)).map(|(_, h)| *h));
    Ok(WugResult {
        matcher,
        items: items.len(),
        overall: mean_of(hits.iter().copied()).unwrap_or(0.0),
        per_cell: WUG_TARGETS.iter().map(|&c| (c, select(&|i| i.tgt_tag == c))).collect(),
        per_order: [select(&|i| !i.swapped), select(&|i| i.swapped)],
    })
}

/// Decodes every item once and scores it under each matcher. Also returns
/// the decoded forms.
pub fn wug_evaluate(predictor: &mut dyn Predictor, items: &[WugItem], table: &SuffixTable, matchers: &[WugMatcher]) -> Result<(Vec<WugResult>, Vec<String>)> {
    let queries: Vec<Query> = items.iter().map(WugItem::query).collect();
    let produced: Vec<String> = predictor.predict(&queries)?.into_iter().map(|p| p.form).collect();
    let results = matchers.iter().map(|&m| wug_score(items, &produced, table, m)).collect::<Result<Vec<_>>>()?;
    Ok((results, produced))
}

/// One participant's answer for a nonce verb.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanResponse {
    pub participant: String,
    pub verb: String,
    pub cell: CellTag,
    pub response_form: String,
    pub retained: bool,
}

/// Reads `participant, verb, cell, response_form, retained_flag` rows.
pub fn parse_human_responses(text: &str, source_name: &str) -> Result<Vec<HumanResponse>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let perr = |msg: String| Error::Parse { source_name: source_name.to_string(), line: i + 1, msg };
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || row.starts_with('#') || (i == 0 && row.starts_with("participant\t")) {
            continue;
        }
        let c: Vec<&str> = row.split('\t').map(str::trim).collect();
        if c.len() != 5 {
            return Err(perr(format!("expected 5 columns, found {}", c.len())));
        }
        let retained = match c[4].to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" => true,
            "0" | "false" | "no" => false,
            other => return Err(perr(format!("retained_flag must be 0/1, found {:?}", other))),
        };
        out.push(HumanResponse {
            participant: c[0].to_string(),
            verb: c[1].to_string(),
            cell: parse_cell(c[2]).map_err(perr)?,
            response_form: c[3].to_string(),
            retained,
        });
    }
    Ok(out)
}

pub fn load_human_responses(path: &Path) -> Result<Vec<HumanResponse>> {
    parse_human_responses(&read_file(path)?, &path.display().to_string())
}

/// Per-cell share of retained human responses that the matcher accepts,
/// judged against the same items the models see.
pub fn human_cell_means(responses: &[HumanResponse], items: &[WugItem], table: &SuffixTable, matcher: WugMatcher) -> Result<Vec<(CellTag, Option<f64>)>> {
    let by_key: BTreeMap<(&str, CellTag), &WugItem> = items.iter().map(|i| ((i.lemma.as_str(), i.tgt_tag), i)).collect();
    let mut hits: BTreeMap<CellTag, Vec<bool>> = BTreeMap::new();
    for r in responses.iter().filter(|r| r.retained) {
        let item = by_key
            .get(&(r.verb.as_str(), r.cell))
            .ok_or_else(|| Error::Config(format!("human response for {} {} has no matching stimulus", r.verb, r.cell.label())))?;
        hits.entry(r.cell).or_default().push(matcher.correct(item, &r.response_form, table));
    }
    Ok(WUG_TARGETS.iter().map(|c| (*c, hits.get(c).and_then(|h| mean_of(h.iter().copied())))).collect())
}
