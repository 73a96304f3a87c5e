use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::CellTag;
use super::paradigm::{ConjClass, Paradigm};
use super::suffix::SuffixTable;
use crate::error::{Error, Result};

/// Recipe for an artificial verb lexicon with one L-shaped alternation.
///
/// Stems are `(onset vowel){1,max_syllables} coda`. L verbs draw their coda
/// from `l_codas` and one segment from `insertions`, which they insert before
/// the ending in every L-cell. NL verbs draw from `nl_codas` and never
/// alternate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternationSpec {
    pub onsets: Vec<String>,
    pub vowels: Vec<String>,
    pub l_codas: Vec<String>,
    pub nl_codas: Vec<String>,
    pub insertions: Vec<String>,
    pub classes: Vec<ConjClass>,
    pub max_syllables: usize,
    pub suffixes: SuffixTable,
}

impl Default for AlternationSpec {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
        AlternationSpec {
            onsets: s(&["p", "t", "k", "b", "d", "m", "s", "f", "l", "ɾ", "x", "ʧ"]),
            vowels: s(&["a", "e", "i", "o", "u"]),
            l_codas: s(&["n", "l", "s", "ɾ"]),
            nl_codas: s(&["n", "l", "s", "ɾ", "t", "p", "m", "d"]),
            insertions: s(&["g", "k"]),
            classes: vec![ConjClass::Er],
            max_syllables: 2,
            suffixes: SuffixTable::default(),
        }
    }
}

impl AlternationSpec {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("alternation spec has no {}", what)));
        if self.onsets.is_empty() {
            return bad("onsets");
        }
        if self.vowels.is_empty() {
            return bad("vowels");
        }
        if self.l_codas.is_empty() || self.nl_codas.is_empty() {
            return bad("codas for one of the classes");
        }
        if self.classes.is_empty() {
            return bad("conjugation classes");
        }
        if self.max_syllables == 0 {
            return bad("syllables");
        }
        if self.insertions.is_empty() || self.insertions.iter().any(String::is_empty) {
            return bad("usable insertion segments");
        }
        Ok(())
    }

    fn ending(&self, class: ConjClass, cell: CellTag) -> Result<&str> {
        self.suffixes
            .candidates(class, cell)
            .first()
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("suffix table has no ending for {} {}", class, cell)))
    }

    /// Inflects `stem` through all 12 cells, inserting `insertion` in the
    /// L-cells when given.
    pub fn inflect(&self, stem: &str, class: ConjClass, insertion: Option<&str>) -> Result<Paradigm> {
        let forms = CellTag::ALL
            .into_iter()
            .map(|cell| {
                let ins = if cell.is_l_cell() { insertion.unwrap_or("") } else { "" };
                Ok(format!("{}{}{}", stem, ins, self.ending(class, cell)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Paradigm::new(format!("{}{}", stem, class.infinitive_ending()), class, forms)
    }

    fn draw_stem(&self, rng: &mut ChaCha8Rng, codas: &[String]) -> String {
        let syllables = rng.gen_range(1..=self.max_syllables);
        let mut stem = String::new();
        for _ in 0..syllables {
            stem.push_str(self.onsets.choose(rng).expect("validated"));
            stem.push_str(self.vowels.choose(rng).expect("validated"));
        }
        stem.push_str(codas.choose(rng).expect("validated"));
        stem
    }
}

/// `n_l` alternating verbs followed by `n_nl` regular ones, all with distinct
/// lemmas.
pub fn synthesize_paradigms(n_l: usize, n_nl: usize, spec: &AlternationSpec, seed: u64) -> Result<Vec<Paradigm>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n_l + n_nl);
    for (count, alternating) in [(n_l, true), (n_nl, false)] {
        let codas = if alternating { &spec.l_codas } else { &spec.nl_codas };
        let mut made = 0;
        let mut attempts = 0usize;
        while made < count {
            attempts += 1;
            if attempts > 1000 * (count + 10) {
                return Err(Error::Config(format!("cannot draw {} distinct stems from the alternation spec", count)));
            }
            let stem = spec.draw_stem(&mut rng, codas);
            let class = *spec.classes.choose(&mut rng).expect("validated");
            let insertion = alternating.then(|| spec.insertions.choose(&mut rng).expect("validated").as_str());
            let p = spec.inflect(&stem, class, insertion)?;
            if seen.insert(p.lemma.clone()) {
                out.push(p);
                made += 1;
            }
        }
    }
    Ok(out)
}
