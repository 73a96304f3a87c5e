//! Paradigms, verb classification, frequency-controlled sampling and
//! re-inflection triples.

mod cell;
mod instance;
mod paradigm;
pub mod phon;
mod sample;
mod suffix;
mod synth;

pub use cell::{CellTag, Mood, Number, Person, TagParseError};
pub use instance::{canonical_pair, generate_triples, instances_to_tsv, parse_instances, triples_for, ReinflectionInstance, Source};
pub use paradigm::{load_paradigms, paradigms_to_tsv, parse_paradigms, ConjClass, LoadedParadigms, Paradigm, Rejected};
pub use sample::{
    apportion, l_count, sample_condition, split_lemmas, subsample_triples, LemmaSample, Lexicon, SplitRatios, SplitSpec,
    SubsampleScope, Verb,
};
pub use suffix::{classify_verb, StemSplit, SuffixMatch, SuffixTable, VerbClass};
pub use synth::{synthesize_paradigms, AlternationSpec};

/// The three frequency conditions: share of L-shaped lemmas.
pub const CONDITIONS: [f64; 3] = [0.10, 0.50, 0.90];

/// Lemmas sampled per condition.
pub const POOL_SIZE: usize = 332;
