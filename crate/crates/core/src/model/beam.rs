//! Beam search and greedy decoding.

use std::cmp::Ordering;

use morphome_numcore::Scalar;

use super::infer::DecoderState;
use super::{DecoderBatch, TransformerModel};
use crate::encoding::{EncodedSequence, Vocab, BOS, EOS, SPECIALS};
use crate::error::{Error, Result};

/// Instances decoded together.
const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated characters, without EOS.
    pub tokens: Vec<usize>,
    pub form: String,
    /// Sum of token log-probabilities, EOS included when present.
    pub log_prob: f64,
    /// `log_prob` divided by the number of generated tokens.
    pub score: f64,
    /// False when cut off at `max_len` without EOS.
    pub finished: bool,
}

impl Hypothesis {
    fn new(tokens: Vec<usize>, log_prob: f64, finished: bool, vocab: &Vocab) -> Self {
        let len = tokens.len() + finished as usize;
        Hypothesis { form: vocab.decode(&tokens), score: log_prob / len.max(1) as f64, tokens, log_prob, finished }
    }
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then(b.log_prob.total_cmp(&a.log_prob)).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Log-probabilities over one logit row, in f64.
fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Output ids a hypothesis may emit: EOS and the characters.
fn emittable(out_vocab: usize) -> impl Iterator<Item = usize> {
    std::iter::once(EOS).chain(SPECIALS.len()..out_vocab)
}

fn check_args(beam: usize, max_len: usize) -> Result<()> {
    if beam == 0 || max_len == 0 {
        return Err(Error::Config(format!("beam {} and max_len {} must be positive", beam, max_len)));
    }
    Ok(())
}

struct Live {
    tokens: Vec<usize>,
    log_prob: f64,
    row: usize,
}

/// Up to `beam` distinct hypotheses per input, best first, ranked by
/// length-normalized log-probability.
pub fn beam_search<T: Scalar>(model: &TransformerModel<T>, vocab: &Vocab, inputs: &[EncodedSequence], beam: usize, max_len: usize) -> Result<Vec<Vec<Hypothesis>>> {
    check_args(beam, max_len)?;
    if max_len > model.config().max_len {
        return Err(Error::Overlength { len: max_len, max: model.config().max_len });
    }
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(CHUNK) {
        out.extend(beam_chunk(model, vocab, chunk, beam, max_len)?);
    }
    Ok(out)
}

fn beam_chunk<T: Scalar>(model: &TransformerModel<T>, vocab: &Vocab, inputs: &[EncodedSequence], beam: usize, max_len: usize) -> Result<Vec<Vec<Hypothesis>>> {
    let refs: Vec<&EncodedSequence> = inputs.iter().collect();
    let enc = model.encoder_batch(&refs)?;
    let memory = model.memory(&enc)?;
    let v = model.config().out_vocab;
    let mut live: Vec<Vec<Live>> = (0..inputs.len()).map(|_| vec![Live { tokens: Vec::new(), log_prob: 0.0, row: 0 }]).collect();
    let mut finished: Vec<Vec<Hypothesis>> = vec![Vec::new(); inputs.len()];
    let mut state = DecoderState::empty(model.config().layers);
    for t in 0..max_len {
        let (mut parents, mut instance, mut tokens) = (Vec::new(), Vec::new(), Vec::new());
        for (i, hyps) in live.iter().enumerate() {
            for h in hyps {
                parents.push(h.row);
                instance.push(i);
                tokens.push(h.tokens.last().copied().unwrap_or(BOS));
            }
        }
        if tokens.is_empty() {
            break;
        }
        let (logits, next) = model.step(&memory, &state, &parents, &instance, &tokens);
        state = next;
        let mut row = 0;
        for (i, hyps) in live.iter_mut().enumerate() {
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            for (h_idx, h) in hyps.iter().enumerate() {
                let r = row + h_idx;
                let lp = log_softmax(&logits[r * v..(r + 1) * v].iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>());
                cands.extend(emittable(v).map(|w| (h.log_prob + lp[w], h_idx, w)));
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut grown = Vec::new();
            for &(lp, h_idx, w) in cands.iter().take(beam) {
                let parent = &hyps[h_idx];
                if w == EOS {
                    finished[i].push(Hypothesis::new(parent.tokens.clone(), lp, true, vocab));
                } else {
                    let mut tokens = parent.tokens.clone();
                    tokens.push(w);
                    grown.push(Live { tokens, log_prob: lp, row: row + h_idx });
                }
            }
            row += hyps.len();
            if t + 1 == max_len {
                finished[i].extend(grown.drain(..).map(|h| Hypothesis::new(h.tokens, h.log_prob, false, vocab)));
            }
            if finished[i].len() >= beam {
                grown.clear();
            }
            *hyps = grown;
        }
    }
    Ok(finished
        .into_iter()
        .map(|mut hs| {
            hs.sort_by(rank);
            let mut seen = std::collections::HashSet::new();
            hs.retain(|h| seen.insert(h.form.clone()));
            hs.truncate(beam);
            hs
        })
        .collect())
}

/// Most probable next token at every step, recomputing the full decoder each
/// time. Ties go to the lower id.
pub fn greedy_decode<T: Scalar>(model: &TransformerModel<T>, vocab: &Vocab, inputs: &[EncodedSequence], max_len: usize) -> Result<Vec<Hypothesis>> {
    check_args(1, max_len)?;
    let v = model.config().out_vocab;
    let refs: Vec<&EncodedSequence> = inputs.iter().collect();
    let enc = model.encoder_batch(&refs)?;
    let mut prefixes: Vec<Vec<usize>> = vec![vec![BOS]; inputs.len()];
    let mut log_probs = vec![0.0; inputs.len()];
    let mut done = vec![false; inputs.len()];
    for _ in 0..max_len {
        if done.iter().all(|&d| d) {
            break;
        }
        let views: Vec<&[usize]> = prefixes.iter().map(Vec::as_slice).collect();
        let dec = DecoderBatch::from_prefixes(&views)?;
        let logits = model.logits(&enc, &dec)?;
        for i in 0..inputs.len() {
            if done[i] {
                continue;
            }
            let r = i * dec.len + prefixes[i].len() - 1;
            let lp = log_softmax(&logits.row(r).iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>());
            let best = emittable(v).fold(None::<usize>, |b, w| match b {
                Some(b) if lp[b] >= lp[w] => Some(b),
                _ => Some(w),
            });
            let w = best.expect("EOS is always emittable");
            log_probs[i] += lp[w];
            prefixes[i].push(w);
            done[i] = w == EOS;
        }
    }
    Ok(prefixes
        .into_iter()
        .zip(log_probs)
        .map(|(p, lp)| {
            let finished = p.last() == Some(&EOS);
            let tokens = p[1..p.len() - finished as usize].to_vec();
            Hypothesis::new(tokens, lp, finished, vocab)
        })
        .collect())
}
