use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::cell::CellTag;
use super::phon::strip_stress;
use crate::error::{read_file, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConjClass {
    Ar,
    Er,
    Ir,
}

impl ConjClass {
    pub const ALL: [ConjClass; 3] = [ConjClass::Ar, ConjClass::Er, ConjClass::Ir];

    pub fn code(self) -> &'static str {
        match self {
            ConjClass::Ar => "AR",
            ConjClass::Er => "ER",
            ConjClass::Ir => "IR",
        }
    }

    /// Theme vowel plus `r`, as in the infinitive.
    pub fn infinitive_ending(self) -> &'static str {
        match self {
            ConjClass::Ar => "ar",
            ConjClass::Er => "er",
            ConjClass::Ir => "ir",
        }
    }

    /// Infers the class from an infinitive such as `poner` or `poˈneɾ`.
    pub fn from_infinitive(lemma: &str) -> Option<ConjClass> {
        let bare = strip_stress(lemma);
        let mut tail = bare.chars().rev();
        if !matches!(tail.next(), Some('r' | 'ɾ')) {
            return None;
        }
        match tail.next() {
            Some('a') => Some(ConjClass::Ar),
            Some('e') => Some(ConjClass::Er),
            Some('i') => Some(ConjClass::Ir),
            _ => None,
        }
    }
}

impl fmt::Display for ConjClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ConjClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().trim_start_matches('-').to_ascii_uppercase().as_str() {
            "AR" => Ok(ConjClass::Ar),
            "ER" => Ok(ConjClass::Er),
            "IR" => Ok(ConjClass::Ir),
            _ => Err(format!("unknown conjugation class {:?}", s)),
        }
    }
}

/// A lemma with its full present-tense paradigm.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paradigm {
    pub lemma: String,
    pub conj_class: ConjClass,
    forms: Vec<String>,
}

impl Paradigm {
    /// `forms` is indexed like [`CellTag::ALL`].
    pub fn new(lemma: impl Into<String>, conj_class: ConjClass, forms: Vec<String>) -> Result<Self> {
        let lemma = lemma.into();
        if forms.len() != 12 {
            return Err(Error::Config(format!("{}: paradigm needs 12 forms, got {}", lemma, forms.len())));
        }
        if let Some(i) = forms.iter().position(|f| f.is_empty()) {
            return Err(Error::Config(format!("{}: empty form for {}", lemma, CellTag::ALL[i])));
        }
        Ok(Paradigm { lemma, conj_class, forms })
    }

    pub fn form(&self, cell: CellTag) -> &str {
        &self.forms[cell.index()]
    }

    pub fn forms(&self) -> impl Iterator<Item = (CellTag, &str)> {
        CellTag::ALL.into_iter().zip(self.forms.iter().map(String::as_str))
    }

    /// Applies `f` to every form, keeping lemma and class.
    pub fn map_forms(&self, mut f: impl FnMut(&str) -> String) -> Paradigm {
        Paradigm { lemma: self.lemma.clone(), conj_class: self.conj_class, forms: self.forms.iter().map(|s| f(s)).collect() }
    }
}

/// A lemma dropped by the loader because some cells had no row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    pub lemma: String,
    pub missing: Vec<CellTag>,
}

impl fmt::Display for Rejected {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<String> = self.missing.iter().map(|c| c.to_string()).collect();
        write!(f, "{}: missing {}", self.lemma, cells.join(", "))
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadedParadigms {
    pub paradigms: Vec<Paradigm>,
    pub rejected: Vec<Rejected>,
}

pub fn load_paradigms(path: &Path) -> Result<LoadedParadigms> {
    parse_paradigms(&read_file(path)?, &path.display().to_string())
}

/// Parses `lemma, conj_class, cell_tag, form` rows. The class column may be
/// empty or absent (three columns), in which case the infinitive decides.
pub fn parse_paradigms(text: &str, source_name: &str) -> Result<LoadedParadigms> {
    struct Pending {
        class: Option<(ConjClass, usize)>,
        forms: Vec<Option<String>>,
        first_line: usize,
    }
    let perr = |line: usize, msg: String| Error::Parse { source_name: source_name.to_string(), line, msg };

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || row.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = row.split('\t').map(str::trim).collect();
        if order.is_empty() && cols[0].eq_ignore_ascii_case("lemma") {
            continue;
        }
        let (lemma, class_col, tag_col, form) = match cols.as_slice() {
            [l, c, t, f] => (*l, Some(*c), *t, *f),
            [l, t, f] => (*l, None, *t, *f),
            _ => return Err(perr(line, format!("expected 3 or 4 tab-separated columns, found {}", cols.len()))),
        };
        if lemma.is_empty() || form.is_empty() {
            return Err(perr(line, "empty lemma or form".into()));
        }
        let tag: CellTag = tag_col.parse().map_err(|e| perr(line, format!("{}", e)))?;
        let class = match class_col.filter(|c| !c.is_empty()) {
            Some(c) => Some(c.parse::<ConjClass>().map_err(|e| perr(line, e))?),
            None => None,
        };
        let entry = pending.entry(lemma.to_string()).or_insert_with(|| {
            order.push(lemma.to_string());
            Pending { class: None, forms: vec![None; 12], first_line: line }
        });
        if let Some(c) = class {
            match entry.class {
                Some((prev, prev_line)) if prev != c => {
                    return Err(perr(line, format!("{}: class {} conflicts with {} on line {}", lemma, c, prev, prev_line)))
                }
                Some(_) => {}
                None => entry.class = Some((c, line)),
            }
        }
        let slot = &mut entry.forms[tag.index()];
        if slot.is_some() {
            return Err(Error::DuplicateCell {
                source_name: source_name.to_string(),
                line,
                lemma: lemma.to_string(),
                cell: tag.to_string(),
            });
        }
        *slot = Some(form.to_string());
    }

    let mut out = LoadedParadigms::default();
    for lemma in order {
        let p = pending.remove(&lemma).expect("every ordered lemma is pending");
        let missing: Vec<CellTag> =
            CellTag::ALL.into_iter().filter(|c| p.forms[c.index()].is_none()).collect();
        if !missing.is_empty() {
            out.rejected.push(Rejected { lemma, missing });
            continue;
        }
        let class = match p.class {
            Some((c, _)) => c,
            None => ConjClass::from_infinitive(&lemma).ok_or_else(|| {
                perr(p.first_line, format!("{}: no class column and the infinitive ending is not -ar/-er/-ir", lemma))
            })?,
        };
        let forms = p.forms.into_iter().map(|f| f.expect("checked total")).collect();
        out.paradigms.push(Paradigm::new(lemma, class, forms)?);
    }
    Ok(out)
}

/// Writes paradigms in the same four-column layout the loader reads.
pub fn paradigms_to_tsv(paradigms: &[Paradigm]) -> String {
    let mut s = String::from("lemma\tconj_class\tcell_tag\tform\n");
    for p in paradigms {
        for (cell, form) in p.forms() {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", p.lemma, p.conj_class, cell, form));
        }
    }
    s
}
