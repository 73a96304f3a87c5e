use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cell::CellTag;
use super::paradigm::{ConjClass, Paradigm};
use super::phon::{is_combining, is_stress_mark, strip_stress, unaccent};
use crate::error::{read_file, Error, Result};

/// Candidate endings per (class, cell). Matching ignores stress marks and
/// vowel accents on both sides.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<SuffixRow>", from = "Vec<SuffixRow>")]
pub struct SuffixTable {
    entries: BTreeMap<(ConjClass, CellTag), Vec<String>>,
}

/// Serialized form of one table entry.
#[derive(Serialize, Deserialize)]
struct SuffixRow {
    class: ConjClass,
    cell: CellTag,
    suffixes: Vec<String>,
}

impl From<SuffixTable> for Vec<SuffixRow> {
    fn from(t: SuffixTable) -> Self {
        t.entries.into_iter().map(|((class, cell), suffixes)| SuffixRow { class, cell, suffixes }).collect()
    }
}

impl From<Vec<SuffixRow>> for SuffixTable {
    fn from(rows: Vec<SuffixRow>) -> Self {
        SuffixTable { entries: rows.into_iter().map(|r| ((r.class, r.cell), r.suffixes)).collect() }
    }
}

const DEFAULT_ROWS: [(ConjClass, [&str; 12]); 3] = [
    (ConjClass::Ar, ["o", "as", "a", "amos", "ais|ajs", "an", "e", "es", "e", "emos", "eis|ejs", "en"]),
    (ConjClass::Er, ["o", "es", "e", "emos", "eis|ejs", "en", "a", "as", "a", "amos", "ais|ajs", "an"]),
    (ConjClass::Ir, ["o", "es", "e", "imos", "is", "en", "a", "as", "a", "amos", "ais|ajs", "an"]),
];

impl Default for SuffixTable {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        for (class, row) in DEFAULT_ROWS {
            for (cell, alts) in CellTag::ALL.into_iter().zip(row) {
                entries.insert((class, cell), alts.split('|').map(String::from).collect());
            }
        }
        SuffixTable { entries }
    }
}

/// Where the stripped suffix came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuffixMatch {
    Cell,
    ClassFallback,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StemSplit {
    pub stem: String,
    pub suffix: String,
    pub source: SuffixMatch,
}

impl StemSplit {
    pub fn matched(&self) -> bool {
        self.source != SuffixMatch::None
    }
}

impl SuffixTable {
    pub fn empty() -> Self {
        SuffixTable { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, class: ConjClass, cell: CellTag, suffix: impl Into<String>) {
        let list = self.entries.entry((class, cell)).or_default();
        let suffix = suffix.into();
        if !list.contains(&suffix) {
            list.push(suffix);
        }
    }

    pub fn candidates(&self, class: ConjClass, cell: CellTag) -> &[String] {
        self.entries.get(&(class, cell)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn class_inventory(&self, class: ConjClass) -> impl Iterator<Item = &str> {
        self.entries.range((class, CellTag::ALL[0])..=(class, CellTag::ALL[11])).flat_map(|(_, v)| v.iter().map(String::as_str))
    }

    /// Reads `class, cell_tag, suffix` rows; an optional header is skipped.
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut table = SuffixTable::empty();
        for (i, raw) in text.lines().enumerate() {
            let perr = |msg: String| Error::Parse { source_name: source_name.to_string(), line: i + 1, msg };
            let row = raw.trim_end_matches('\r');
            if row.trim().is_empty() || row.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = row.split('\t').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(perr(format!("expected 3 columns (class, cell_tag, suffix), found {}", cols.len())));
            }
            if i == 0 && cols[0].eq_ignore_ascii_case("class") {
                continue;
            }
            let class: ConjClass = cols[0].parse().map_err(perr)?;
            let cell: CellTag = cols[1].parse().map_err(|e| perr(format!("{}", e)))?;
            if cols[2].is_empty() {
                return Err(perr("empty suffix".into()));
            }
            table.insert(class, cell, cols[2]);
        }
        Ok(table)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("class\tcell_tag\tsuffix\n");
        for ((class, cell), list) in &self.entries {
            for suf in list {
                s.push_str(&format!("{}\t{}\t{}\n", class, cell, suf));
            }
        }
        s
    }

    /// Splits `form` into stem and ending for `cell`.
    pub fn extract_stem(&self, form: &str, cell: CellTag, class: ConjClass) -> StemSplit {
        let chars = Normalized::new(form);
        if let Some(split) = longest_match(&chars, form, self.candidates(class, cell).iter().map(String::as_str)) {
            return StemSplit { source: SuffixMatch::Cell, ..split };
        }
        if let Some(split) = longest_match(&chars, form, self.class_inventory(class)) {
            return StemSplit { source: SuffixMatch::ClassFallback, ..split };
        }
        StemSplit { stem: form.to_string(), suffix: String::new(), source: SuffixMatch::None }
    }

    pub fn stem(&self, form: &str, cell: CellTag, class: ConjClass) -> String {
        self.extract_stem(form, cell, class).stem
    }
}

/// A form with stress marks and accents removed, remembering where each kept
/// character ends (including any combining marks attached to it).
struct Normalized {
    chars: Vec<char>,
    ends: Vec<usize>,
}

impl Normalized {
    fn new(form: &str) -> Self {
        let (mut chars, mut ends) = (Vec::new(), Vec::<usize>::new());
        for (at, c) in form.char_indices() {
            let end = at + c.len_utf8();
            if is_combining(c) {
                if let Some(last) = ends.last_mut() {
                    *last = end;
                }
            } else if !is_stress_mark(c) {
                chars.push(unaccent(c));
                ends.push(end);
            }
        }
        Normalized { chars, ends }
    }
}

fn longest_match<'a>(norm: &Normalized, form: &str, candidates: impl Iterator<Item = &'a str>) -> Option<StemSplit> {
    let mut best: Option<usize> = None;
    for cand in candidates {
        let suffix: Vec<char> = super::phon::unstressed(cand).chars().collect();
        // The stem must keep at least one character.
        if suffix.is_empty() || suffix.len() >= norm.chars.len() || !norm.chars.ends_with(&suffix) {
            continue;
        }
        if best.is_none_or(|b| suffix.len() > b) {
            best = Some(suffix.len());
        }
    }
    best.map(|len| {
        let cut = norm.ends[norm.chars.len() - len - 1];
        StemSplit { stem: form[..cut].to_string(), suffix: form[cut..].to_string(), source: SuffixMatch::Cell }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VerbClass {
    L,
    NL,
}

impl std::fmt::Display for VerbClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerbClass::L => "L",
            VerbClass::NL => "NL",
        })
    }
}

impl std::str::FromStr for VerbClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "L" => Ok(VerbClass::L),
            "NL" => Ok(VerbClass::NL),
            _ => Err(format!("unknown verb class {:?}", s)),
        }
    }
}

/// L iff the 1SG.IND stem equals every subjunctive stem and differs from every
/// other indicative stem. Stems are compared without stress marks.
pub fn classify_verb(p: &Paradigm, table: &SuffixTable) -> VerbClass {
    let stems: Vec<String> =
        p.forms().map(|(cell, form)| strip_stress(&table.stem(form, cell, p.conj_class))).collect();
    let first = &stems[0];
    let l_shaped = CellTag::ALL[1..]
        .iter()
        .all(|cell| (stems[cell.index()] == *first) == cell.is_l_cell());
    if l_shaped {
        VerbClass::L
    } else {
        VerbClass::NL
    }
}
