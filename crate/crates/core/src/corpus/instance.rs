use serde::{Deserialize, Serialize};

use super::cell::CellTag;
use super::paradigm::Paradigm;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Source {
    pub form: String,
    pub tag: CellTag,
}

impl Source {
    pub fn new(form: impl Into<String>, tag: CellTag) -> Self {
        Source { form: form.into(), tag }
    }
}

/// Two attested forms of a lemma plus the cell to produce.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReinflectionInstance {
    pub lemma: String,
    pub src1: Source,
    pub src2: Source,
    pub tgt_tag: CellTag,
    pub tgt_form: String,
}

/// Sources are stored ordered by their serialized tags.
pub fn canonical_pair(a: Source, b: Source) -> (Source, Source) {
    if a.tag.to_string() <= b.tag.to_string() {
        (a, b)
    } else {
        (b, a)
    }
}

impl ReinflectionInstance {
    pub fn new(lemma: impl Into<String>, a: Source, b: Source, tgt_tag: CellTag, tgt_form: impl Into<String>) -> Result<Self> {
        if a.tag == b.tag || tgt_tag == a.tag || tgt_tag == b.tag {
            return Err(Error::Config(format!("sources {} and {} with target {} are not three distinct cells", a.tag, b.tag, tgt_tag)));
        }
        let (src1, src2) = canonical_pair(a, b);
        Ok(ReinflectionInstance { lemma: lemma.into(), src1, src2, tgt_tag, tgt_form: tgt_form.into() })
    }

    /// (source tags, target) identifies an instance within its lemma.
    pub fn key(&self) -> (CellTag, CellTag, CellTag) {
        (self.src1.tag, self.src2.tag, self.tgt_tag)
    }
}

/// Every unordered source pair with every remaining target: 66 x 10.
pub fn generate_triples(p: &Paradigm) -> Vec<ReinflectionInstance> {
    let mut out = Vec::with_capacity(660);
    for (i, a) in CellTag::ALL.iter().enumerate() {
        for b in &CellTag::ALL[i + 1..] {
            for t in CellTag::ALL {
                if t == *a || t == *b {
                    continue;
                }
                let src = |c: CellTag| Source::new(p.form(c), c);
                out.push(
                    ReinflectionInstance::new(&p.lemma, src(*a), src(*b), t, p.form(t)).expect("distinct cells by construction"),
                );
            }
        }
    }
    out
}

/// Triples for every paradigm, in input order.
pub fn triples_for(paradigms: &[&Paradigm]) -> Vec<ReinflectionInstance> {
    paradigms.iter().flat_map(|p| generate_triples(p)).collect()
}

pub fn instances_to_tsv(instances: &[ReinflectionInstance]) -> String {
    let mut s = String::from("lemma\tsrc1_form\tsrc1_tag\tsrc2_form\tsrc2_tag\ttgt_tag\ttgt_form\n");
    for i in instances {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            i.lemma, i.src1.form, i.src1.tag, i.src2.form, i.src2.tag, i.tgt_tag, i.tgt_form
        ));
    }
    s
}

pub fn parse_instances(text: &str, source_name: &str) -> Result<Vec<ReinflectionInstance>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let perr = |msg: String| Error::Parse { source_name: source_name.to_string(), line: i + 1, msg };
        let row = raw.trim_end_matches('\r');
        if row.trim().is_empty() || (i == 0 && row.starts_with("lemma\t")) {
            continue;
        }
        let c: Vec<&str> = row.split('\t').collect();
        if c.len() != 7 {
            return Err(perr(format!("expected 7 columns, found {}", c.len())));
        }
        let tag = |s: &str| s.parse::<CellTag>().map_err(|e| perr(e.to_string()));
        let inst = ReinflectionInstance::new(c[0], Source::new(c[1], tag(c[2])?), Source::new(c[3], tag(c[4])?), tag(c[5])?, c[6])
            .map_err(|e| perr(e.to_string()))?;
        out.push(inst);
    }
    Ok(out)
}
