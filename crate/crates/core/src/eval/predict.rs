use morphome_numcore::Scalar;

use super::metrics::PredictionRecord;
use crate::corpus::{CellTag, Lexicon, ReinflectionInstance, Source};
use crate::encoding::{encode_sources, Vocab};
use crate::error::{Error, Result};
use crate::model::{beam_search, TransformerModel};

/// Two sources in presentation order plus the cell to produce.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub src1: Source,
    pub src2: Source,
    pub tgt_tag: CellTag,
}

impl From<&ReinflectionInstance> for Query {
    fn from(i: &ReinflectionInstance) -> Self {
        Query { src1: i.src1.clone(), src2: i.src2.clone(), tgt_tag: i.tgt_tag }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub form: String,
    pub log_prob: f64,
}

/// Anything that maps queries to a top-ranked form.
pub trait Predictor {
    fn predict(&mut self, queries: &[Query]) -> Result<Vec<Prediction>>;
}

/// Beam-search decoding with a trained model; the top hypothesis wins.
pub struct ModelPredictor<'a, T: Scalar> {
    pub model: &'a TransformerModel<T>,
    pub vocab: &'a Vocab,
    pub beam: usize,
    pub max_len: usize,
}

impl<T: Scalar> Predictor for ModelPredictor<'_, T> {
    fn predict(&mut self, queries: &[Query]) -> Result<Vec<Prediction>> {
        let variant = self.model.config().variant;
        let inputs =
            queries.iter().map(|q| encode_sources(&q.src1, &q.src2, q.tgt_tag, variant, self.vocab)).collect::<Result<Vec<_>>>()?;
        let hyps = beam_search(self.model, self.vocab, &inputs, self.beam, self.max_len)?;
        Ok(hyps
            .into_iter()
            .map(|h| h.into_iter().next().map_or(Prediction { form: String::new(), log_prob: f64::NEG_INFINITY }, |h| Prediction {
                form: h.form,
                log_prob: h.log_prob,
            }))
            .collect())
    }
}

/// Decodes `instances` and attaches verb and conjugation class from `lexicon`.
pub fn predict_records(predictor: &mut dyn Predictor, instances: &[ReinflectionInstance], lexicon: &Lexicon) -> Result<Vec<PredictionRecord>> {
    let queries: Vec<Query> = instances.iter().map(Query::from).collect();
    let preds = predictor.predict(&queries)?;
    instances
        .iter()
        .zip(preds)
        .map(|(inst, p)| {
            let verb = lexicon.get(&inst.lemma).ok_or_else(|| Error::Config(format!("lemma {} is not in the lexicon", inst.lemma)))?;
            Ok(PredictionRecord {
                lemma: inst.lemma.clone(),
                verb_class: verb.class,
                conj_class: verb.paradigm.conj_class,
                src_tags: [inst.src1.tag, inst.src2.tag],
                tgt_tag: inst.tgt_tag,
                gold: inst.tgt_form.clone(),
                prediction: p.form,
                log_prob: p.log_prob,
            })
        })
        .collect()
}
