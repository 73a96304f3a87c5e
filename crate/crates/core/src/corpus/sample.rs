use std::collections::HashMap;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::instance::ReinflectionInstance;
use super::paradigm::Paradigm;
use super::suffix::{classify_verb, SuffixTable, VerbClass};
use crate::error::{Error, Result};

/// A paradigm with its cached classification.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verb {
    pub paradigm: Paradigm,
    pub class: VerbClass,
}

/// The classified pool, in input order, with lemma lookup.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    verbs: Vec<Verb>,
    by_lemma: HashMap<String, usize>,
}

impl Lexicon {
    pub fn classify(paradigms: Vec<Paradigm>, table: &SuffixTable) -> Self {
        let verbs = paradigms
            .into_iter()
            .map(|p| {
                let class = classify_verb(&p, table);
                Verb { paradigm: p, class }
            })
            .collect();
        Self::from_verbs(verbs)
    }

    fn from_verbs(verbs: Vec<Verb>) -> Self {
        let by_lemma = verbs.iter().enumerate().map(|(i, v)| (v.paradigm.lemma.clone(), i)).collect();
        Lexicon { verbs, by_lemma }
    }

    pub fn verbs(&self) -> &[Verb] {
        &self.verbs
    }

    pub fn len(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty()
    }

    pub fn get(&self, lemma: &str) -> Option<&Verb> {
        self.by_lemma.get(lemma).map(|&i| &self.verbs[i])
    }

    pub fn class_of(&self, lemma: &str) -> Option<VerbClass> {
        self.get(lemma).map(|v| v.class)
    }

    pub fn count(&self, class: VerbClass) -> usize {
        self.verbs.iter().filter(|v| v.class == class).count()
    }

    /// Paradigms for `lemmas`, in that order. Unknown lemmas are an error.
    pub fn paradigms(&self, lemmas: &[String]) -> Result<Vec<&Paradigm>> {
        lemmas
            .iter()
            .map(|l| self.get(l).map(|v| &v.paradigm).ok_or_else(|| Error::Config(format!("lemma {} is not in the lexicon", l))))
            .collect()
    }
}

/// Lemmas drawn for one frequency condition, kept apart by class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaSample {
    pub l: Vec<String>,
    pub nl: Vec<String>,
}

impl LemmaSample {
    pub fn len(&self) -> usize {
        self.l.len() + self.nl.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.l.iter().chain(&self.nl)
    }
}

/// Number of L lemmas for a condition; halves round away from zero.
pub fn l_count(l_fraction: f64, total: usize) -> usize {
    (l_fraction * total as f64).round() as usize
}

pub fn sample_condition(lexicon: &Lexicon, l_fraction: f64, total: usize, seed: u64) -> Result<LemmaSample> {
    if !(0.0..=1.0).contains(&l_fraction) {
        return Err(Error::Config(format!("L fraction {} is outside [0, 1]", l_fraction)));
    }
    let n_l = l_count(l_fraction, total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |class: VerbClass, needed: usize| -> Result<Vec<String>> {
        let pool: Vec<&str> = lexicon.verbs.iter().filter(|v| v.class == class).map(|v| v.paradigm.lemma.as_str()).collect();
        if pool.len() < needed {
            return Err(Error::InsufficientPool { class, needed, available: pool.len() });
        }
        let mut picked = index::sample(&mut rng, pool.len(), needed).into_vec();
        picked.sort_unstable();
        Ok(picked.into_iter().map(|i| pool[i].to_string()).collect())
    };
    let l = draw(VerbClass::L, n_l)?;
    let nl = draw(VerbClass::NL, total - n_l)?;
    Ok(LemmaSample { l, nl })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, dev: 0.1, test: 0.2 }
    }
}

impl SplitRatios {
    /// Split sizes for `n` lemmas: train and test are rounded, dev takes the rest.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        let r = [self.train, self.dev, self.test];
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRatios(format!("{:?} must be non-negative and sum to 1", r)));
        }
        let train = (self.train * n as f64).round() as usize;
        let test = (self.test * n as f64).round() as usize;
        if train + test > n {
            return Err(Error::InvalidRatios(format!("{:?} leaves no room for dev with {} lemmas", r, n)));
        }
        Ok([train, n - train - test, test])
    }
}

/// Lemma-disjoint train/dev/test partition of one condition's sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub condition: f64,
    pub seed: u64,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn parts(&self) -> [&[String]; 3] {
        [&self.train, &self.dev, &self.test]
    }
}

/// Largest-remainder apportionment of `total` over `weights`; ties go to the
/// earlier slot.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut rest: Vec<(usize, usize)> = weights.iter().enumerate().map(|(i, w)| (total * w % sum, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = total - out.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(missing) {
        out[i] += 1;
    }
    out
}

/// Class-stratified split: each part gets L lemmas in proportion to its size.
pub fn split_lemmas(sample: &LemmaSample, ratios: SplitRatios, condition: f64, seed: u64) -> Result<SplitSpec> {
    let sizes = ratios.sizes(sample.len())?;
    let l_per = apportion(sample.l.len(), &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut l = sample.l.clone();
    let mut nl = sample.nl.clone();
    l.shuffle(&mut rng);
    nl.shuffle(&mut rng);
    let (mut l_iter, mut nl_iter) = (l.into_iter(), nl.into_iter());
    let mut parts: Vec<Vec<String>> = sizes
        .iter()
        .zip(&l_per)
        .map(|(&size, &nl_)| {
            let mut part: Vec<String> = l_iter.by_ref().take(nl_).collect();
            part.extend(nl_iter.by_ref().take(size - nl_));
            part.sort();
            part
        })
        .collect();
    let test = parts.pop().unwrap_or_default();
    let dev = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    Ok(SplitSpec { condition, seed, train, dev, test })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleScope {
    #[default]
    PerLemma,
    Global,
}

/// Uniform sample without replacement, `round(n * fraction)` per lemma (or
/// over the whole list for [`SubsampleScope::Global`]). Input order is kept.
pub fn subsample_triples(
    instances: &[ReinflectionInstance],
    fraction: f64,
    seed: u64,
    scope: SubsampleScope,
) -> Result<Vec<ReinflectionInstance>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("subsample fraction {} is outside (0, 1]", fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match scope {
        SubsampleScope::Global => vec![(0..instances.len()).collect()],
        SubsampleScope::PerLemma => {
            let mut order: Vec<&str> = Vec::new();
            let mut by_lemma: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, inst) in instances.iter().enumerate() {
                by_lemma
                    .entry(inst.lemma.as_str())
                    .or_insert_with(|| {
                        order.push(inst.lemma.as_str());
                        Vec::new()
                    })
                    .push(i);
            }
            order.into_iter().map(|l| by_lemma.remove(l).unwrap_or_default()).collect()
        }
    };
    let mut keep = Vec::new();
    for g in groups {
        let n = (g.len() as f64 * fraction).round() as usize;
        keep.extend(index::sample(&mut rng, g.len(), n).into_iter().map(|j| g[j]));
    }
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| instances[i].clone()).collect())
}
