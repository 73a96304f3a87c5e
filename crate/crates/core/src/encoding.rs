//! Vocabulary and token layout for the five architecture variants.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CellTag, Mood, Number, Paradigm, Person, ReinflectionInstance, Source};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<sep>"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TagScheme {
    Atomic,
    SubtagTokens,
    Onehot7,
    Geometric4,
}

impl TagScheme {
    /// Width of the binary feature vector, or 0 for token schemes.
    pub fn feature_width(self) -> usize {
        match self {
            TagScheme::Onehot7 => 7,
            TagScheme::Geometric4 => 4,
            _ => 0,
        }
    }

    pub fn uses_features(self) -> bool {
        self.feature_width() > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PosPolicy {
    Sequential,
    TagFixedZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ArchVariant {
    Vanilla,
    CharSeparated,
    FeatureInvariant,
    FeatureOnehot,
    FeatureGeometric,
}

impl ArchVariant {
    pub const ALL: [ArchVariant; 5] = [
        ArchVariant::Vanilla,
        ArchVariant::CharSeparated,
        ArchVariant::FeatureInvariant,
        ArchVariant::FeatureOnehot,
        ArchVariant::FeatureGeometric,
    ];

    pub fn pos(self) -> PosPolicy {
        match self {
            ArchVariant::Vanilla | ArchVariant::CharSeparated => PosPolicy::Sequential,
            _ => PosPolicy::TagFixedZero,
        }
    }

    pub fn scheme(self) -> TagScheme {
        match self {
            ArchVariant::Vanilla | ArchVariant::FeatureInvariant => TagScheme::Atomic,
            ArchVariant::CharSeparated => TagScheme::SubtagTokens,
            ArchVariant::FeatureOnehot => TagScheme::Onehot7,
            ArchVariant::FeatureGeometric => TagScheme::Geometric4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchVariant::Vanilla => "VANILLA",
            ArchVariant::CharSeparated => "CHAR_SEPARATED",
            ArchVariant::FeatureInvariant => "FEATURE_INVARIANT",
            ArchVariant::FeatureOnehot => "FEATURE_ONEHOT",
            ArchVariant::FeatureGeometric => "FEATURE_GEOMETRIC",
        }
    }
}

impl fmt::Display for ArchVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        ArchVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| format!("unknown variant {:?} (expected one of VANILLA, CHAR_SEPARATED, FEATURE_INVARIANT, FEATURE_ONEHOT, FEATURE_GEOMETRIC)", s))
    }
}

/// Block order mood[IND, SBJV], person[1, 2, 3], number[SG, PL].
pub fn tag_to_onehot(t: CellTag) -> [u8; 7] {
    let mut v = [0u8; 7];
    v[t.mood as usize] = 1;
    v[2 + t.person as usize] = 1;
    v[5 + t.number as usize] = 1;
    v
}

/// [participant, author, plural, indicative].
pub fn tag_to_geometric(t: CellTag) -> [u8; 4] {
    let (participant, author) = match t.person {
        Person::First => (1, 1),
        Person::Second => (1, 0),
        Person::Third => (0, 0),
    };
    [participant, author, (t.number == Number::Pl) as u8, (t.mood == Mood::Ind) as u8]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenType {
    Char,
    Tag,
    Sep,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputToken {
    Id(usize),
    Features(Vec<u8>),
}

/// Encoder input: parallel token, type and position lists.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub tokens: Vec<InputToken>,
    pub token_type: Vec<TokenType>,
    pub positions: Vec<usize>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.token_type.len() != self.tokens.len() || self.positions.len() != self.tokens.len() {
            return Err(Error::Config("encoded sequence lists differ in length".into()));
        }
        let chars = self.positions.iter().zip(&self.token_type).filter(|(_, t)| **t != TokenType::Tag).map(|(p, _)| *p);
        let mut prev = None;
        for p in chars {
            if prev.is_some_and(|q| p <= q) {
                return Err(Error::Config("character positions are not strictly increasing".into()));
            }
            prev = Some(p);
        }
        Ok(())
    }
}

/// Token ids: the four specials, then characters, then tag entries. The
/// decoder's output space is the specials plus characters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "VocabFile", try_from = "VocabFile")]
pub struct Vocab {
    scheme: TagScheme,
    chars: Vec<char>,
    char_ids: HashMap<char, usize>,
    tags: Vec<String>,
    tag_ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(chars: impl IntoIterator<Item = char>, scheme: TagScheme) -> Self {
        let chars: Vec<char> = chars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let tags: Vec<String> = match scheme {
            TagScheme::Atomic => CellTag::ALL.iter().map(|t| t.to_string()).collect(),
            TagScheme::SubtagTokens => {
                let mut seen = Vec::new();
                for t in CellTag::ALL {
                    for s in t.subtags() {
                        if !seen.iter().any(|x: &String| x == s) {
                            seen.push(s.to_string());
                        }
                    }
                }
                seen
            }
            TagScheme::Onehot7 | TagScheme::Geometric4 => Vec::new(),
        };
        Self::from_parts(scheme, chars, tags)
    }

    fn from_parts(scheme: TagScheme, chars: Vec<char>, tags: Vec<String>) -> Self {
        let base = SPECIALS.len();
        let char_ids = chars.iter().enumerate().map(|(i, &c)| (c, base + i)).collect();
        let tag_ids = tags.iter().enumerate().map(|(i, t)| (t.clone(), base + chars.len() + i)).collect();
        Vocab { scheme, chars, char_ids, tags, tag_ids }
    }

    pub fn scheme(&self) -> TagScheme {
        self.scheme
    }

    /// Every input id, tags included.
    pub fn size(&self) -> usize {
        SPECIALS.len() + self.chars.len() + self.tags.len()
    }

    pub fn output_size(&self) -> usize {
        SPECIALS.len() + self.chars.len()
    }

    pub fn tag_entries(&self) -> &[String] {
        &self.tags
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn char_id(&self, c: char) -> Result<usize> {
        self.char_ids.get(&c).copied().ok_or(Error::UnknownChar(c))
    }

    pub fn tag_id(&self, entry: &str) -> Option<usize> {
        self.tag_ids.get(entry).copied()
    }

    pub fn id_to_char(&self, id: usize) -> Option<char> {
        id.checked_sub(SPECIALS.len()).and_then(|i| self.chars.get(i)).copied()
    }

    pub fn encode_chars(&self, form: &str) -> Result<Vec<usize>> {
        form.chars().map(|c| self.char_id(c)).collect()
    }

    /// Characters for `ids`, stopping at EOS and skipping other specials.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().take_while(|&&i| i != EOS).filter_map(|&i| self.id_to_char(i)).collect()
    }

    fn tag_block(&self, t: CellTag) -> Vec<InputToken> {
        match self.scheme {
            TagScheme::Atomic => vec![InputToken::Id(self.tag_ids[&t.to_string()])],
            TagScheme::SubtagTokens => t.subtags().iter().map(|s| InputToken::Id(self.tag_ids[*s])).collect(),
            TagScheme::Onehot7 => vec![InputToken::Features(tag_to_onehot(t).to_vec())],
            TagScheme::Geometric4 => vec![InputToken::Features(tag_to_geometric(t).to_vec())],
        }
    }
}

/// Vocabulary over every character in `paradigms`.
pub fn build_vocab(paradigms: &[Paradigm], variant: ArchVariant) -> Result<Vocab> {
    if paradigms.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    let chars = paradigms.iter().flat_map(|p| p.forms().flat_map(|(_, f)| f.chars()).collect::<Vec<_>>());
    Ok(Vocab::new(chars, variant.scheme()))
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    scheme: TagScheme,
    specials: Vec<String>,
    chars: BTreeMap<String, usize>,
    tags: BTreeMap<String, usize>,
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile {
            scheme: v.scheme,
            specials: SPECIALS.iter().map(|s| s.to_string()).collect(),
            chars: v.char_ids.iter().map(|(c, i)| (c.to_string(), *i)).collect(),
            tags: v.tag_ids.clone().into_iter().collect(),
        }
    }
}

impl TryFrom<VocabFile> for Vocab {
    type Error = String;

    fn try_from(f: VocabFile) -> Result<Self, String> {
        if f.specials != SPECIALS {
            return Err(format!("unexpected special tokens {:?}", f.specials));
        }
        let mut chars: Vec<(usize, char)> = Vec::new();
        for (s, i) in f.chars {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push((i, c)),
                _ => return Err(format!("vocabulary entry {:?} is not a single character", s)),
            }
        }
        chars.sort_unstable();
        let mut tags: Vec<(usize, String)> = f.tags.into_iter().map(|(t, i)| (i, t)).collect();
        tags.sort_unstable();
        let v = Vocab::from_parts(f.scheme, chars.into_iter().map(|(_, c)| c).collect(), tags.into_iter().map(|(_, t)| t).collect());
        let expected = Vocab::new(v.chars.iter().copied(), v.scheme);
        if v != expected {
            return Err("vocabulary ids are not in canonical order".into());
        }
        Ok(v)
    }
}

/// Encoder layout: `[tag1] src1 SEP [tag2] src2 SEP [target tag]`, sources in
/// the order given.
pub fn encode_sources(src1: &Source, src2: &Source, tgt_tag: CellTag, variant: ArchVariant, vocab: &Vocab) -> Result<EncodedSequence> {
    if vocab.scheme() != variant.scheme() {
        return Err(Error::Config(format!("vocabulary scheme {:?} does not match variant {}", vocab.scheme(), variant)));
    }
    let mut seq = EncodedSequence { tokens: Vec::new(), token_type: Vec::new(), positions: Vec::new() };
    let fixed = variant.pos() == PosPolicy::TagFixedZero;
    let push = |seq: &mut EncodedSequence, tok: InputToken, ty: TokenType| {
        let i = seq.tokens.len();
        seq.positions.push(if fixed && ty == TokenType::Tag { 0 } else { i });
        seq.tokens.push(tok);
        seq.token_type.push(ty);
    };
    for src in [src1, src2] {
        for tok in vocab.tag_block(src.tag) {
            push(&mut seq, tok, TokenType::Tag);
        }
        for id in vocab.encode_chars(&src.form)? {
            push(&mut seq, InputToken::Id(id), TokenType::Char);
        }
        push(&mut seq, InputToken::Id(SEP), TokenType::Sep);
    }
    for tok in vocab.tag_block(tgt_tag) {
        push(&mut seq, tok, TokenType::Tag);
    }
    Ok(seq)
}

/// `BOS chars EOS`.
pub fn encode_target(form: &str, vocab: &Vocab) -> Result<Vec<usize>> {
    let mut ids = vec![BOS];
    ids.extend(vocab.encode_chars(form)?);
    ids.push(EOS);
    Ok(ids)
}

pub fn encode_instance(inst: &ReinflectionInstance, variant: ArchVariant, vocab: &Vocab) -> Result<(EncodedSequence, Vec<usize>)> {
    Ok((encode_sources(&inst.src1, &inst.src2, inst.tgt_tag, variant, vocab)?, encode_target(&inst.tgt_form, vocab)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_parse() {
        for v in ArchVariant::ALL {
            assert_eq!(v.name().parse::<ArchVariant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert_eq!("feature-geometric".parse::<ArchVariant>().unwrap(), ArchVariant::FeatureGeometric);
    }

    #[test]
    fn vocab_json_round_trip() {
        for v in ArchVariant::ALL {
            let vocab = Vocab::new("pongaes".chars(), v.scheme());
            let json = serde_json::to_string(&vocab).unwrap();
            assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), vocab);
        }
    }
}
