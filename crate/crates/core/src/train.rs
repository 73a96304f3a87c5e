//! Training loop, checkpoint selection and the per-condition run grid.

use std::collections::BTreeMap;

use morphome_numcore::{AdamConfig, AdamState, Graph, NumError, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    generate_triples, sample_condition, split_lemmas, subsample_triples, Lexicon, ReinflectionInstance, SplitRatios, SplitSpec,
    SubsampleScope,
};
use crate::encoding::{encode_instance, ArchVariant, EncodedSequence, Vocab};
use crate::error::{Error, Result};
use crate::model::{beam_search, DecoderBatch, Dropout, ModelConfig, TransformerModel};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Linear warmup, then flat at the peak.
    #[default]
    Constant,
    /// Linear warmup, then decay with `sqrt(warmup / step)`.
    InverseSqrt,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup: usize,
    /// Instances per batch.
    pub batch_size: usize,
    pub max_steps: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub beam: usize,
    pub precision: Precision,
    /// Decoding limit for dev evaluation and prediction.
    pub decode_max_len: usize,
    /// Evaluate on a fixed random subset of this many dev instances.
    pub dev_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_peak: 0.001,
            warmup: 4000,
            batch_size: 400,
            max_steps: 10000,
            dropout: 0.3,
            label_smoothing: 0.1,
            eval_every: 500,
            seed: 0,
            schedule: LrSchedule::Constant,
            beam: 5,
            precision: Precision::F32,
            decode_max_len: 32,
            dev_limit: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train config: {}", m)));
        if !(self.lr_peak > 0.0) {
            return bad("lr_peak must be positive");
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_every == 0 || self.beam == 0 || self.decode_max_len == 0 {
            return bad("batch_size, max_steps, eval_every, beam and decode_max_len must be positive");
        }
        if self.warmup > self.max_steps {
            return bad("warmup exceeds max_steps");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("dropout and label_smoothing must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Learning rate at 1-based `step`.
pub fn lr_schedule(step: usize, c: &TrainConfig) -> f64 {
    let step = step.max(1) as f64;
    let warm = c.warmup as f64;
    if c.warmup == 0 || step >= warm {
        match c.schedule {
            LrSchedule::Constant => c.lr_peak,
            LrSchedule::InverseSqrt if c.warmup == 0 => c.lr_peak / step.sqrt(),
            LrSchedule::InverseSqrt => c.lr_peak * (warm / step).sqrt(),
        }
    } else {
        c.lr_peak * step / warm
    }
}

/// splitmix64 finalizer over a combined pair; used to derive child seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(b).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Yields batches of indices from a fresh permutation per pass; the final
/// batch of a pass may be short.
pub struct BatchSampler {
    n: usize,
    batch: usize,
    seed: u64,
    pass: u64,
    order: Vec<usize>,
    at: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        BatchSampler { n, batch: batch.max(1), seed, pass: 0, order: Vec::new(), at: 0 }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.n == 0 {
            return Vec::new();
        }
        if self.at >= self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.seed, self.pass)));
            self.pass += 1;
            self.at = 0;
        }
        let end = (self.at + self.batch).min(self.n);
        let out = self.order[self.at..end].to_vec();
        self.at = end;
        out
    }
}

/// Identity of one trained model within a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub split: SplitSpec,
    pub subsample_seed: u64,
    pub triple_fraction: f64,
    #[serde(default)]
    pub scope: SubsampleScope,
    pub variant: ArchVariant,
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        format!("s{}_u{}", self.split.seed, self.subsample_seed)
    }

    /// Initialization, dropout and batch-order seed; shared across variants.
    pub fn train_seed(&self, base: u64) -> u64 {
        mix_seed(mix_seed(base, self.split.seed), self.subsample_seed)
    }
}

/// Encoded training and dev data for one run.
pub struct RunData {
    pub vocab: Vocab,
    pub train: Vec<ReinflectionInstance>,
    pub dev: Vec<ReinflectionInstance>,
}

impl RunData {
    /// Subsampled triples for the training lemmas and every triple for dev.
    pub fn build(lexicon: &Lexicon, spec: &RunSpec, vocab: Vocab) -> Result<Self> {
        let triples = |lemmas: &[String]| -> Result<Vec<ReinflectionInstance>> {
            Ok(lexicon.paradigms(lemmas)?.into_iter().flat_map(generate_triples).collect())
        };
        let train = subsample_triples(&triples(&spec.split.train)?, spec.triple_fraction, spec.subsample_seed, spec.scope)?;
        Ok(RunData { vocab, train, dev: triples(&spec.split.dev)? })
    }
}

/// The outcome of [`train_run`], with the best parameters kept in memory.
#[derive(Clone, Debug)]
pub struct RunResult<T> {
    pub summary: RunSummary,
    pub model_config: ModelConfig,
    pub best_params: Vec<Tensor<T>>,
}

/// The serializable part of a run result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub spec: RunSpec,
    pub train_seed: u64,
    pub best_step: usize,
    pub best_dev_acc: f64,
    /// (step, dev sequence accuracy) at each evaluation.
    pub dev_trace: Vec<(usize, f64)>,
    /// Mean training loss per step.
    pub loss_trace: Vec<f64>,
}

impl RunSummary {
    /// `step,loss,dev_acc` rows; dev_acc is empty between evaluations.
    pub fn trace_csv(&self) -> String {
        let dev: BTreeMap<usize, f64> = self.dev_trace.iter().copied().collect();
        let mut s = String::from("step,loss,dev_acc\n");
        for (i, loss) in self.loss_trace.iter().enumerate() {
            let step = i + 1;
            let acc = dev.get(&step).map(|a| a.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", step, loss, acc));
        }
        s
    }
}

impl<T: Scalar> RunResult<T> {
    pub fn best_model(&self) -> Result<TransformerModel<T>> {
        let mut model = TransformerModel::new(self.model_config.clone(), 0)?;
        model.params_mut().restore(&self.best_params)?;
        Ok(model)
    }
}

/// Encoded inputs and gold forms for evaluation.
pub struct EvalSet {
    pub inputs: Vec<EncodedSequence>,
    pub gold: Vec<String>,
}

impl EvalSet {
    pub fn new(instances: &[ReinflectionInstance], variant: ArchVariant, vocab: &Vocab) -> Result<Self> {
        let mut inputs = Vec::with_capacity(instances.len());
        for inst in instances {
            inputs.push(encode_instance(inst, variant, vocab)?.0);
        }
        Ok(EvalSet { inputs, gold: instances.iter().map(|i| i.tgt_form.clone()).collect() })
    }
}

/// Share of inputs whose top beam hypothesis equals the gold form.
pub fn sequence_accuracy_of<T: Scalar>(model: &TransformerModel<T>, vocab: &Vocab, set: &EvalSet, beam: usize, max_len: usize) -> Result<f64> {
    if set.inputs.is_empty() {
        return Err(Error::Config("empty evaluation set".into()));
    }
    let hyps = beam_search(model, vocab, &set.inputs, beam, max_len)?;
    let correct = hyps.iter().zip(&set.gold).filter(|(h, g)| h.first().is_some_and(|h| &h.form == *g)).count();
    Ok(correct as f64 / set.gold.len() as f64)
}

/// The dev instances a run evaluates on, honoring `dev_limit`.
pub fn dev_subset(dev: &[ReinflectionInstance], cfg: &TrainConfig) -> Vec<ReinflectionInstance> {
    match cfg.dev_limit {
        Some(limit) if limit < dev.len() => {
            let mut idx: Vec<usize> = (0..dev.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3)));
            idx.truncate(limit);
            idx.sort_unstable();
            idx.into_iter().map(|i| dev[i].clone()).collect()
        }
        _ => dev.to_vec(),
    }
}

/// One optimizer update on `batch`. Returns the mean loss, or `None` when the
/// loss or an updated parameter is non-finite (the parameters may then be
/// partially updated).
pub fn update_step<T: Scalar>(
    model: &mut TransformerModel<T>,
    adam: &mut AdamState<T>,
    batch: &[&(EncodedSequence, Vec<usize>)],
    lr: f64,
    label_smoothing: f64,
    dropout: f64,
    rng: &mut dyn RngCore,
) -> Result<Option<f64>> {
    let enc_refs: Vec<&EncodedSequence> = batch.iter().map(|b| &b.0).collect();
    let tgt_refs: Vec<&[usize]> = batch.iter().map(|b| b.1.as_slice()).collect();
    let enc = model.encoder_batch(&enc_refs)?;
    let dec = DecoderBatch::from_targets(&tgt_refs)?;
    let (loss, grads) = {
        let mut g = Graph::new(model.params());
        let mut drop = Some(Dropout { rate: dropout, rng });
        let l = model.loss(&mut g, &enc, &dec, label_smoothing, &mut drop)?;
        let loss = g.value(l).data()[0].to_f64().unwrap_or(f64::NAN);
        if !loss.is_finite() {
            return Ok(None);
        }
        (loss, g.backward(l)?)
    };
    let params = model.params_mut();
    params.zero_grads();
    params.accumulate(&grads);
    match adam.step(params, lr) {
        Err(NumError::NonFinite { .. }) => Ok(None),
        Err(e) => Err(e.into()),
        Ok(()) => Ok(Some(loss)),
    }
}

/// Trains one model. `model_config.dropout` is superseded by `cfg.dropout`.
pub fn train_run<T: Scalar>(spec: &RunSpec, model_config: &ModelConfig, cfg: &TrainConfig, data: &RunData) -> Result<RunResult<T>> {
    cfg.validate()?;
    if model_config.variant != spec.variant {
        return Err(Error::Config(format!("model variant {} does not match run variant {}", model_config.variant, spec.variant)));
    }
    if data.train.is_empty() {
        return Err(Error::Config("no training instances".into()));
    }
    let variant = spec.variant;
    let mut encoded = Vec::with_capacity(data.train.len());
    for inst in &data.train {
        encoded.push(encode_instance(inst, variant, &data.vocab)?);
    }
    let dev = EvalSet::new(&dev_subset(&data.dev, cfg), variant, &data.vocab)?;

    let mut model = TransformerModel::<T>::new(model_config.clone(), mix_seed(cfg.seed, 0))?;
    let mut adam = AdamState::new(model.params(), AdamConfig::default());
    let mut sampler = BatchSampler::new(encoded.len(), cfg.batch_size, mix_seed(cfg.seed, 1));
    let mut drop_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));

    let mut loss_trace = Vec::with_capacity(cfg.max_steps);
    let mut dev_trace = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor<T>>)> = None;
    for step in 1..=cfg.max_steps {
        let idx = sampler.next_batch();
        let batch: Vec<&(EncodedSequence, Vec<usize>)> = idx.iter().map(|&i| &encoded[i]).collect();
        let outcome = update_step(&mut model, &mut adam, &batch, lr_schedule(step, cfg), cfg.label_smoothing, cfg.dropout, &mut drop_rng)?;
        loss_trace.push(outcome.unwrap_or(f64::NAN));
        let Some(loss) = outcome else {
            let loss = f64::NAN;
            return Err(Error::Diverged { step, loss, loss_trace, dev_trace });
        };
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let acc = sequence_accuracy_of(&model, &data.vocab, &dev, cfg.beam, cfg.decode_max_len)?;
            dev_trace.push((step, acc));
            log::debug!("{} {} step {} loss {:.4} dev {:.4}", variant, spec.run_id(), step, loss, acc);
            if best.as_ref().is_none_or(|b| acc > b.1) {
                best = Some((step, acc, model.params().snapshot()));
            }
        }
    }
    let (best_step, best_dev_acc, best_params) = best.expect("the final step always evaluates");
    Ok(RunResult {
        summary: RunSummary {
            run_id: spec.run_id(),
            spec: spec.clone(),
            train_seed: cfg.seed,
            best_step,
            best_dev_acc,
            dev_trace,
            loss_trace,
        },
        model_config: model_config.clone(),
        best_params,
    })
}

/// How the grid for one condition is drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub pool_size: usize,
    pub ratios: SplitRatios,
    pub triple_fraction: f64,
    pub scope: SubsampleScope,
    pub split_seeds: usize,
    pub subsample_seeds: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            pool_size: crate::corpus::POOL_SIZE,
            ratios: SplitRatios::default(),
            triple_fraction: 0.25,
            scope: SubsampleScope::PerLemma,
            split_seeds: 3,
            subsample_seeds: 4,
        }
    }
}

fn condition_code(condition: f64) -> u64 {
    (condition * 1000.0).round() as u64
}

/// Split seeds for a condition; each drives both the lemma draw and the split.
pub fn split_seeds(condition: f64, base_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| mix_seed(mix_seed(base_seed, condition_code(condition)), i)).collect()
}

pub fn subsample_seeds(condition: f64, base_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| mix_seed(mix_seed(base_seed, condition_code(condition)), 1000 + i)).collect()
}

/// Lemma splits for a condition, one per split seed.
pub fn condition_splits(lexicon: &Lexicon, condition: f64, base_seed: u64, grid: &GridConfig) -> Result<Vec<SplitSpec>> {
    split_seeds(condition, base_seed, grid.split_seeds)
        .into_iter()
        .map(|seed| {
            let sample = sample_condition(lexicon, condition, grid.pool_size, seed)?;
            split_lemmas(&sample, grid.ratios, condition, seed)
        })
        .collect()
}

/// Every (split, subsample) pair for each variant, variants outermost.
pub fn grid_specs(splits: &[SplitSpec], condition: f64, base_seed: u64, variants: &[ArchVariant], grid: &GridConfig) -> Vec<RunSpec> {
    let subs = subsample_seeds(condition, base_seed, grid.subsample_seeds);
    let mut out = Vec::new();
    for &variant in variants {
        for split in splits {
            for &u in &subs {
                out.push(RunSpec { split: split.clone(), subsample_seed: u, triple_fraction: grid.triple_fraction, scope: grid.scope, variant });
            }
        }
    }
    out
}

/// Where completed runs are recorded.
pub trait RunLedger {
    fn is_complete(&self, spec: &RunSpec) -> bool;
    fn record(&mut self, summary: &RunSummary) -> Result<()>;
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GridOutcome {
    pub executed: usize,
    pub skipped: usize,
}

/// Runs every spec not yet marked complete in `ledger`.
pub fn run_grid<F>(specs: &[RunSpec], ledger: &mut dyn RunLedger, mut run: F) -> Result<GridOutcome>
where
    F: FnMut(&RunSpec) -> Result<RunSummary>,
{
    let mut outcome = GridOutcome::default();
    for spec in specs {
        if ledger.is_complete(spec) {
            outcome.skipped += 1;
            continue;
        }
        let summary = run(spec)?;
        ledger.record(&summary)?;
        outcome.executed += 1;
    }
    Ok(outcome)
}
