//! Encoder-decoder transformer with variant-specific tag embedding.

mod beam;
mod infer;

use std::path::Path;

use morphome_numcore::{checkpoint, AttnLayout, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use beam::{beam_search, greedy_decode, Hypothesis};
pub use infer::{DecoderState, Memory};

use crate::encoding::{ArchVariant, EncodedSequence, InputToken, PosPolicy, TokenType, PAD};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_len: usize,
    /// Input ids: specials, characters and tag entries.
    pub vocab_size: usize,
    /// Decoder outputs: specials and characters.
    pub out_vocab: usize,
    pub variant: ArchVariant,
    /// Add PE(0) to tag rows when tags sit at a fixed position.
    #[serde(default = "yes")]
    pub tag_pe: bool,
}

fn yes() -> bool {
    true
}

impl ModelConfig {
    /// Four layers, four heads, d=256, d_ff=1024, dropout 0.3, 64 positions.
    pub fn canonical(variant: ArchVariant, vocab_size: usize, out_vocab: usize) -> Self {
        ModelConfig { layers: 4, heads: 4, d_model: 256, d_ff: 1024, dropout: 0.3, max_len: 64, vocab_size, out_vocab, variant, tag_pe: true }
    }

    pub fn feature_width(&self) -> usize {
        self.variant.scheme().feature_width()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.d_model == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad(format!("model dimensions must be positive: {:?}", self));
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.out_vocab < 4 || self.vocab_size < self.out_vocab {
            return bad(format!("vocabulary sizes {} / {} are inconsistent", self.vocab_size, self.out_vocab));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} is outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Parameter count implied by the configuration.
    pub fn expected_params(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ff);
        let lin = |i: usize, o: usize| i * o + o;
        let attn = 4 * lin(d, d);
        let ffn = lin(d, f) + lin(f, d);
        let enc = attn + ffn + 2 * 2 * d;
        let dec = 2 * attn + ffn + 3 * 2 * d;
        self.vocab_size * d + self.feature_width() * d + self.layers * (enc + dec) + lin(d, self.out_vocab)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attn {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncLayer {
    pub attn: Attn,
    pub ln1: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: Norm,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecLayer {
    pub self_attn: Attn,
    pub ln1: Norm,
    pub cross: Attn,
    pub ln2: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln3: Norm,
}

#[derive(Clone, Debug)]
pub(crate) struct Ids {
    pub embed: ParamId,
    pub feat: Option<ParamId>,
    pub enc: Vec<EncLayer>,
    pub dec: Vec<DecLayer>,
    pub out: Linear,
}

/// Creates parameters on first use, otherwise looks them up by name.
struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<T: Scalar> Builder<'_, T> {
    fn get(&mut self, name: String, shape: &[usize], bound: f64) -> Result<ParamId> {
        match self.rng.as_deref_mut() {
            Some(rng) => Ok(self.store.add_uniform(name, shape, bound, rng)?),
            None => {
                let id = self.store.id(&name).ok_or_else(|| Error::Config(format!("checkpoint has no parameter {}", name)))?;
                if self.store.value(id).shape() != shape {
                    return Err(Error::Config(format!("parameter {} has shape {:?}, expected {:?}", name, self.store.value(id).shape(), shape)));
                }
                Ok(id)
            }
        }
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<ParamId> {
        if self.rng.is_some() {
            Ok(self.store.add(name, Tensor::full(shape, T::lit(value)))?)
        } else {
            self.get(name, shape, 0.0)
        }
    }

    fn linear(&mut self, name: &str, i: usize, o: usize) -> Result<Linear> {
        let bound = 1.0 / (i as f64).sqrt();
        Ok(Linear { w: self.get(format!("{}.w", name), &[i, o], bound)?, b: self.get(format!("{}.b", name), &[o], bound)? })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm { g: self.constant(format!("{}.g", name), &[d], 1.0)?, b: self.constant(format!("{}.b", name), &[d], 0.0)? })
    }

    fn attn(&mut self, name: &str, d: usize) -> Result<Attn> {
        Ok(Attn {
            q: self.linear(&format!("{}.q", name), d, d)?,
            k: self.linear(&format!("{}.k", name), d, d)?,
            v: self.linear(&format!("{}.v", name), d, d)?,
            o: self.linear(&format!("{}.o", name), d, d)?,
        })
    }

    fn build(&mut self, c: &ModelConfig) -> Result<Ids> {
        let (d, f) = (c.d_model, c.d_ff);
        let emb_bound = 1.0 / (d as f64).sqrt();
        let embed = self.get("embed".into(), &[c.vocab_size, d], emb_bound)?;
        let feat = match c.feature_width() {
            0 => None,
            k => Some(self.get("feat_proj".into(), &[k, d], emb_bound)?),
        };
        let mut enc = Vec::new();
        for l in 0..c.layers {
            let p = format!("enc.{}", l);
            enc.push(EncLayer {
                attn: self.attn(&format!("{}.attn", p), d)?,
                ln1: self.norm(&format!("{}.ln1", p), d)?,
                ff1: self.linear(&format!("{}.ff1", p), d, f)?,
                ff2: self.linear(&format!("{}.ff2", p), f, d)?,
                ln2: self.norm(&format!("{}.ln2", p), d)?,
            });
        }
        let mut dec = Vec::new();
        for l in 0..c.layers {
            let p = format!("dec.{}", l);
            dec.push(DecLayer {
                self_attn: self.attn(&format!("{}.self", p), d)?,
                ln1: self.norm(&format!("{}.ln1", p), d)?,
                cross: self.attn(&format!("{}.cross", p), d)?,
                ln2: self.norm(&format!("{}.ln2", p), d)?,
                ff1: self.linear(&format!("{}.ff1", p), d, f)?,
                ff2: self.linear(&format!("{}.ff2", p), f, d)?,
                ln3: self.norm(&format!("{}.ln3", p), d)?,
            });
        }
        let out_w = self.get("out.w".into(), &[d, c.out_vocab], 1.0 / (d as f64).sqrt())?;
        let out_b = self.constant("out.b".into(), &[c.out_vocab], 0.0)?;
        Ok(Ids { embed, feat, enc, dec, out: Linear { w: out_w, b: out_b } })
    }
}

/// Sinusoidal encoding, `[positions, d]`.
pub fn sinusoid_table(positions: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; positions * d];
    for pos in 0..positions {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

pub struct TransformerModel<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    ids: Ids,
    pe: Vec<T>,
}

/// Padded encoder inputs for a batch.
#[derive(Clone, Debug)]
pub struct EncoderBatch {
    pub batch: usize,
    pub len: usize,
    id_rows: Vec<usize>,
    ids: Vec<usize>,
    feat_rows: Vec<usize>,
    features: Vec<u8>,
    /// Row-major `[batch*len]`; `None` for padding and for unencoded tag rows.
    pe_pos: Vec<Option<usize>>,
    pub key_valid: Vec<bool>,
}

/// Decoder inputs (`BOS c1 .. cn`) and targets (`c1 .. cn EOS`), padded.
#[derive(Clone, Debug)]
pub struct DecoderBatch {
    pub batch: usize,
    pub len: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub valid: Vec<bool>,
}

impl DecoderBatch {
    /// From full target sequences `BOS .. EOS`.
    pub fn from_targets(seqs: &[&[usize]]) -> Result<Self> {
        let len = seqs.iter().map(|s| s.len().saturating_sub(1)).max().unwrap_or(0);
        let mut b = DecoderBatch { batch: seqs.len(), len, inputs: vec![PAD; seqs.len() * len], targets: vec![PAD; seqs.len() * len], valid: vec![false; seqs.len() * len] };
        for (i, s) in seqs.iter().enumerate() {
            if s.len() < 2 {
                return Err(Error::Config("decoder sequence needs BOS and EOS".into()));
            }
            for t in 0..s.len() - 1 {
                b.inputs[i * len + t] = s[t];
                b.targets[i * len + t] = s[t + 1];
                b.valid[i * len + t] = true;
            }
        }
        Ok(b)
    }

    /// Inputs only, all rows valid; used to score fixed prefixes.
    pub fn from_prefixes(prefixes: &[&[usize]]) -> Result<Self> {
        let len = prefixes.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut b = DecoderBatch { batch: prefixes.len(), len, inputs: vec![PAD; prefixes.len() * len], targets: vec![PAD; prefixes.len() * len], valid: vec![false; prefixes.len() * len] };
        for (i, s) in prefixes.iter().enumerate() {
            for (t, &id) in s.iter().enumerate() {
                b.inputs[i * len + t] = id;
                b.valid[i * len + t] = true;
            }
        }
        Ok(b)
    }
}

/// Dropout settings for a training forward pass.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

impl<T: Scalar> TransformerModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids = Builder { store: &mut store, rng: Some(&mut rng) }.build(&config)?;
        Ok(Self::assemble(config, store, ids))
    }

    /// Wraps an existing parameter store, e.g. one read from a checkpoint.
    pub fn from_store(config: ModelConfig, mut store: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let ids = Builder { store: &mut store, rng: None }.build(&config)?;
        if store.len() != Self::param_tensor_count(&config) {
            return Err(Error::Config(format!("checkpoint has {} tensors, model expects {}", store.len(), Self::param_tensor_count(&config))));
        }
        Ok(Self::assemble(config, store, ids))
    }

    fn param_tensor_count(c: &ModelConfig) -> usize {
        // embed, optional projection, 16 tensors per encoder and 26 per decoder layer, output
        1 + (c.feature_width() > 0) as usize + c.layers * (16 + 26) + 2
    }

    fn assemble(config: ModelConfig, params: ParamStore<T>, ids: Ids) -> Self {
        let pe = sinusoid_table(config.max_len, config.d_model).into_iter().map(T::lit).collect();
        TransformerModel { config, params, ids, pe }
    }

    /// Writes `<stem>.bin`/`<stem>.json`; the manifest carries the model
    /// config under `"model"` next to the fields of `extra`.
    pub fn save(&self, stem: &Path, extra: serde_json::Value) -> Result<()> {
        let mut meta = match extra {
            serde_json::Value::Object(m) => m,
            serde_json::Value::Null => serde_json::Map::new(),
            other => return Err(Error::Config(format!("checkpoint metadata must be an object, got {}", other))),
        };
        meta.insert("model".into(), serde_json::to_value(&self.config)?);
        Ok(checkpoint::save(&self.params, stem, serde_json::Value::Object(meta))?)
    }

    /// Reads a checkpoint written by [`TransformerModel::save`], converting
    /// the stored precision if needed. Returns the manifest metadata.
    pub fn load(stem: &Path) -> Result<(Self, serde_json::Value)> {
        let manifest: checkpoint::CheckpointManifest = serde_json::from_slice(&read_bytes(&stem.with_extension("json"))?)?;
        let config: ModelConfig = serde_json::from_value(
            manifest.extra.get("model").cloned().ok_or_else(|| Error::Config(format!("{}: manifest has no model config", stem.display())))?,
        )?;
        let mut model = Self::new(config, 0)?;
        let named = checkpoint::decode_params::<T>(&read_bytes(&stem.with_extension("bin"))?)?;
        checkpoint::load_into(&mut model.params, named)?;
        Ok((model, manifest.extra))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_elements()
    }

    pub(crate) fn pe_row(&self, pos: usize) -> &[T] {
        let d = self.config.d_model;
        &self.pe[pos * d..(pos + 1) * d]
    }

    /// Pads and checks encoder inputs against this model.
    pub fn encoder_batch(&self, seqs: &[&EncodedSequence]) -> Result<EncoderBatch> {
        let c = &self.config;
        let len = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if len > c.max_len {
            return Err(Error::Overlength { len, max: c.max_len });
        }
        let width = c.feature_width();
        let fixed = c.variant.pos() == PosPolicy::TagFixedZero;
        let mut b = EncoderBatch {
            batch: seqs.len(),
            len,
            id_rows: Vec::new(),
            ids: Vec::new(),
            feat_rows: Vec::new(),
            features: Vec::new(),
            pe_pos: vec![None; seqs.len() * len],
            key_valid: vec![false; seqs.len() * len],
        };
        for (i, s) in seqs.iter().enumerate() {
            if s.token_type.len() != s.len() || s.positions.len() != s.len() {
                return Err(Error::Config("encoded sequence lists differ in length".into()));
            }
            for (t, tok) in s.tokens.iter().enumerate() {
                let row = i * len + t;
                match tok {
                    InputToken::Id(id) => {
                        if *id >= c.vocab_size {
                            return Err(Error::Config(format!("token id {} outside vocabulary of {}", id, c.vocab_size)));
                        }
                        b.id_rows.push(row);
                        b.ids.push(*id);
                    }
                    InputToken::Features(f) => {
                        if f.len() != width {
                            return Err(Error::FeatureWidth { got: f.len(), expected: width });
                        }
                        b.feat_rows.push(row);
                        b.features.extend_from_slice(f);
                    }
                }
                let pos = s.positions[t];
                if pos >= c.max_len {
                    return Err(Error::Overlength { len: pos + 1, max: c.max_len });
                }
                let is_tag = s.token_type[t] == TokenType::Tag;
                b.pe_pos[row] = if fixed && is_tag && !c.tag_pe { None } else { Some(pos) };
                b.key_valid[row] = true;
            }
        }
        Ok(b)
    }

    fn pe_tensor(&self, pos: &[Option<usize>]) -> Tensor<T> {
        let d = self.config.d_model;
        let mut data = vec![T::zero(); pos.len() * d];
        for (row, p) in pos.iter().enumerate() {
            if let Some(p) = p {
                data[row * d..(row + 1) * d].copy_from_slice(self.pe_row(*p));
            }
        }
        Tensor::new(&[pos.len(), d], data).expect("sized above")
    }

    /// Token or feature embedding, scaled by sqrt(d), plus positional encoding.
    pub fn embed_input(&self, g: &mut Graph<'_, T>, b: &EncoderBatch) -> Result<Var> {
        let d = self.config.d_model;
        let total = b.batch * b.len;
        let table = g.param(self.ids.embed);
        let rows = g.embedding(table, &b.ids)?;
        let mut x = g.scatter_rows(rows, &b.id_rows, total)?;
        if !b.feat_rows.is_empty() {
            let proj = self.ids.feat.ok_or(Error::FeatureWidth { got: b.features.len() / b.feat_rows.len(), expected: 0 })?;
            let width = self.config.feature_width();
            let f = g.input(Tensor::new(&[b.feat_rows.len(), width], b.features.iter().map(|&v| T::lit(v as f64)).collect())?);
            let p = g.param(proj);
            let fp = g.matmul(f, p)?;
            let fp = g.scatter_rows(fp, &b.feat_rows, total)?;
            x = g.add(x, fp)?;
        }
        let x = g.scale(x, T::lit((d as f64).sqrt()));
        let pe = g.input(self.pe_tensor(&b.pe_pos));
        Ok(g.add(x, pe)?)
    }

    fn embed_decoder(&self, g: &mut Graph<'_, T>, b: &DecoderBatch) -> Result<Var> {
        if b.len > self.config.max_len {
            return Err(Error::Overlength { len: b.len, max: self.config.max_len });
        }
        let table = g.param(self.ids.embed);
        let x = g.embedding(table, &b.inputs)?;
        let x = g.scale(x, T::lit((self.config.d_model as f64).sqrt()));
        let pos: Vec<Option<usize>> = (0..b.batch * b.len).map(|r| Some(r % b.len.max(1))).collect();
        let pe = g.input(self.pe_tensor(&pos));
        Ok(g.add(x, pe)?)
    }

    /// Encoder stack output `[batch*len, d]`.
    pub fn encode(&self, g: &mut Graph<'_, T>, b: &EncoderBatch, drop: &mut Option<Dropout<'_>>) -> Result<Var> {
        let x = self.embed_input(g, b)?;
        let mut x = dropout(g, x, drop)?;
        for layer in &self.ids.enc {
            let mut layout = AttnLayout::new(b.batch, b.len, b.len, self.config.heads);
            layout.key_valid = Some(b.key_valid.clone());
            let a = attention(g, &layer.attn, x, x, layout)?;
            let a = dropout(g, a, drop)?;
            let s = g.add(x, a)?;
            x = norm(g, &layer.ln1, s)?;
            let f = feed_forward(g, &layer.ff1, &layer.ff2, x)?;
            let f = dropout(g, f, drop)?;
            let s = g.add(x, f)?;
            x = norm(g, &layer.ln2, s)?;
        }
        Ok(x)
    }

    /// Decoder logits `[batch*len, out_vocab]` given encoder memory.
    pub fn decode(&self, g: &mut Graph<'_, T>, memory: Var, enc: &EncoderBatch, dec: &DecoderBatch, drop: &mut Option<Dropout<'_>>) -> Result<Var> {
        if enc.batch != dec.batch {
            return Err(Error::Config(format!("{} encoder rows but {} decoder rows", enc.batch, dec.batch)));
        }
        let y = self.embed_decoder(g, dec)?;
        let mut y = dropout(g, y, drop)?;
        let h = self.config.heads;
        for layer in &self.ids.dec {
            let mut layout = AttnLayout::new(dec.batch, dec.len, dec.len, h);
            layout.causal = true;
            let a = attention(g, &layer.self_attn, y, y, layout)?;
            let a = dropout(g, a, drop)?;
            let s = g.add(y, a)?;
            y = norm(g, &layer.ln1, s)?;
            let mut layout = AttnLayout::new(dec.batch, dec.len, enc.len, h);
            layout.key_valid = Some(enc.key_valid.clone());
            let a = attention(g, &layer.cross, y, memory, layout)?;
            let a = dropout(g, a, drop)?;
            let s = g.add(y, a)?;
            y = norm(g, &layer.ln2, s)?;
            let f = feed_forward(g, &layer.ff1, &layer.ff2, y)?;
            let f = dropout(g, f, drop)?;
            let s = g.add(y, f)?;
            y = norm(g, &layer.ln3, s)?;
        }
        linear(g, &self.ids.out, y)
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, enc: &EncoderBatch, dec: &DecoderBatch, drop: &mut Option<Dropout<'_>>) -> Result<Var> {
        let memory = self.encode(g, enc, drop)?;
        self.decode(g, memory, enc, dec, drop)
    }

    /// Mean label-smoothed cross-entropy of the batch.
    pub fn loss(&self, g: &mut Graph<'_, T>, enc: &EncoderBatch, dec: &DecoderBatch, smoothing: f64, drop: &mut Option<Dropout<'_>>) -> Result<Var> {
        let logits = self.forward(g, enc, dec, drop)?;
        Ok(g.smoothed_cross_entropy(logits, &dec.targets, &dec.valid, smoothing)?)
    }

    /// Evaluation-mode logits as a tensor.
    pub fn logits(&self, enc: &EncoderBatch, dec: &DecoderBatch) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, enc, dec, &mut None)?;
        Ok(g.value(out).clone())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

fn dropout<T: Scalar>(g: &mut Graph<'_, T>, x: Var, drop: &mut Option<Dropout<'_>>) -> Result<Var> {
    match drop {
        Some(d) if d.rate > 0.0 => Ok(g.dropout(x, d.rate, &mut *d.rng)?),
        _ => Ok(x),
    }
}

fn linear<T: Scalar>(g: &mut Graph<'_, T>, l: &Linear, x: Var) -> Result<Var> {
    let w = g.param(l.w);
    let y = g.matmul(x, w)?;
    let b = g.param(l.b);
    Ok(g.add_row(y, b)?)
}

fn norm<T: Scalar>(g: &mut Graph<'_, T>, n: &Norm, x: Var) -> Result<Var> {
    let gamma = g.param(n.g);
    let beta = g.param(n.b);
    Ok(g.layer_norm(x, gamma, beta)?)
}

fn feed_forward<T: Scalar>(g: &mut Graph<'_, T>, ff1: &Linear, ff2: &Linear, x: Var) -> Result<Var> {
    let h = linear(g, ff1, x)?;
    let h = g.relu(h);
    linear(g, ff2, h)
}

fn attention<T: Scalar>(g: &mut Graph<'_, T>, a: &Attn, x: Var, mem: Var, layout: AttnLayout) -> Result<Var> {
    let q = linear(g, &a.q, x)?;
    let k = linear(g, &a.k, mem)?;
    let v = linear(g, &a.v, mem)?;
    let o = g.attention(q, k, v, layout)?;
    linear(g, &a.o, o)
}
