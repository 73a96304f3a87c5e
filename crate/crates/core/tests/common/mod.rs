#![allow(dead_code)]

use morphome::corpus::{generate_triples, synthesize_paradigms, AlternationSpec, Paradigm, ReinflectionInstance};
use morphome::encoding::{build_vocab, encode_instance, ArchVariant, EncodedSequence, Vocab};
use morphome::model::{ModelConfig, TransformerModel};
use morphome_numcore::Scalar;

pub fn paradigms(n: usize, seed: u64) -> Vec<Paradigm> {
    synthesize_paradigms(n / 2, n - n / 2, &AlternationSpec::default(), seed).unwrap()
}

pub fn small_config(variant: ArchVariant, vocab: &Vocab, layers: usize, d: usize) -> ModelConfig {
    ModelConfig {
        layers,
        heads: 2,
        d_model: d,
        d_ff: 2 * d,
        dropout: 0.0,
        max_len: 64,
        vocab_size: vocab.size(),
        out_vocab: vocab.output_size(),
        variant,
        tag_pe: true,
    }
}

pub struct Setup<T: Scalar> {
    pub vocab: Vocab,
    pub model: TransformerModel<T>,
    pub instances: Vec<ReinflectionInstance>,
}

impl<T: Scalar> Setup<T> {
    pub fn new(variant: ArchVariant, layers: usize, d: usize, seed: u64) -> Self {
        let ps = paradigms(4, 1);
        let vocab = build_vocab(&ps, variant).unwrap();
        let model = TransformerModel::new(small_config(variant, &vocab, layers, d), seed).unwrap();
        let instances = ps.iter().flat_map(generate_triples).collect();
        Setup { vocab, model, instances }
    }

    pub fn encode(&self, i: usize) -> (EncodedSequence, Vec<usize>) {
        encode_instance(&self.instances[i], self.model.config().variant, &self.vocab).unwrap()
    }
}
