//! Tape-free incremental decoding with cached keys and values.

use morphome_numcore::kernels::{attention_forward, gemm, layer_norm_forward, AttnLayout};
use morphome_numcore::{Graph, Scalar};

use super::{Attn, EncoderBatch, Linear, Norm, TransformerModel};
use crate::error::Result;

/// Encoder output plus the per-layer cross-attention keys and values.
pub struct Memory<T> {
    pub batch: usize,
    pub len: usize,
    pub key_valid: Vec<bool>,
    cross_k: Vec<Vec<T>>,
    cross_v: Vec<Vec<T>>,
}

/// Self-attention cache: `[rows, steps, d]` per layer.
pub struct DecoderState<T> {
    pub rows: usize,
    pub steps: usize,
    k: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> DecoderState<T> {
    pub fn empty(layers: usize) -> Self {
        DecoderState { rows: 0, steps: 0, k: vec![Vec::new(); layers], v: vec![Vec::new(); layers] }
    }
}

impl<T: Scalar> TransformerModel<T> {
    fn dense(&self, l: &Linear, x: &[T], rows: usize) -> Vec<T> {
        let w = self.params.value(l.w);
        let (i, o) = (w.shape()[0], w.shape()[1]);
        let b = self.params.value(l.b).data();
        let mut y = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            y.extend_from_slice(b);
        }
        gemm(x, false, w.data(), false, &mut y, rows, i, o, T::one(), T::one());
        y
    }

    fn add_norm(&self, n: &Norm, x: &mut [T], delta: &[T]) {
        for (a, &b) in x.iter_mut().zip(delta) {
            *a += b;
        }
        let mut out = vec![T::zero(); x.len()];
        layer_norm_forward(x, self.params.value(n.g).data(), self.params.value(n.b).data(), self.config.d_model, &mut out);
        x.copy_from_slice(&out);
    }

    /// Runs the encoder and precomputes cross-attention keys and values.
    pub fn memory(&self, enc: &EncoderBatch) -> Result<Memory<T>> {
        let mut g = Graph::new(&self.params);
        let m = self.encode(&mut g, enc, &mut None)?;
        let mem = g.value(m).data();
        let rows = enc.batch * enc.len;
        let (mut cross_k, mut cross_v) = (Vec::new(), Vec::new());
        for layer in &self.ids.dec {
            cross_k.push(self.dense(&layer.cross.k, mem, rows));
            cross_v.push(self.dense(&layer.cross.v, mem, rows));
        }
        Ok(Memory { batch: enc.batch, len: enc.len, key_valid: enc.key_valid.clone(), cross_k, cross_v })
    }

    /// One decoding step. Row `r` continues cached row `parents[r]`, reads
    /// memory instance `instance[r]` and consumes `tokens[r]`. Returns logits
    /// `[rows, out_vocab]` and the extended cache.
    pub fn step(&self, memory: &Memory<T>, state: &DecoderState<T>, parents: &[usize], instance: &[usize], tokens: &[usize]) -> (Vec<T>, DecoderState<T>) {
        let c = &self.config;
        let d = c.d_model;
        let rows = tokens.len();
        let t = state.steps;
        let embed = self.params.value(self.ids.embed).data();
        let scale = T::lit((d as f64).sqrt());
        let pe = self.pe_row(t);
        let mut x = Vec::with_capacity(rows * d);
        for &tok in tokens {
            x.extend(embed[tok * d..(tok + 1) * d].iter().zip(pe).map(|(&e, &p)| e * scale + p));
        }
        let mut next = DecoderState { rows, steps: t + 1, k: Vec::new(), v: Vec::new() };
        for (l, layer) in self.ids.dec.iter().enumerate() {
            let k_new = self.dense(&layer.self_attn.k, &x, rows);
            let v_new = self.dense(&layer.self_attn.v, &x, rows);
            let extend = |cache: &[T], fresh: &[T]| {
                let mut out = Vec::with_capacity(rows * (t + 1) * d);
                for (r, &p) in parents.iter().enumerate() {
                    if t > 0 {
                        out.extend_from_slice(&cache[p * t * d..(p + 1) * t * d]);
                    }
                    out.extend_from_slice(&fresh[r * d..(r + 1) * d]);
                }
                out
            };
            let k = extend(&state.k[l], &k_new);
            let v = extend(&state.v[l], &v_new);
            let a = self.cached_attention(&layer.self_attn, &x, &k, &v, AttnLayout::new(rows, 1, t + 1, c.heads));
            self.add_norm(&layer.ln1, &mut x, &a);
            let mut layout = AttnLayout::new(rows, 1, memory.len, c.heads);
            layout.key_valid = Some(memory.key_valid.clone());
            layout.kv_group = Some(instance.to_vec());
            let a = self.cached_attention(&layer.cross, &x, &memory.cross_k[l], &memory.cross_v[l], layout);
            self.add_norm(&layer.ln2, &mut x, &a);
            let mut h = self.dense(&layer.ff1, &x, rows);
            h.iter_mut().for_each(|v| *v = v.max(T::zero()));
            let f = self.dense(&layer.ff2, &h, rows);
            self.add_norm(&layer.ln3, &mut x, &f);
            next.k.push(k);
            next.v.push(v);
        }
        (self.dense(&self.ids.out, &x, rows), next)
    }

    fn cached_attention(&self, a: &Attn, x: &[T], k: &[T], v: &[T], layout: AttnLayout) -> Vec<T> {
        let rows = layout.batch * layout.tq;
        let q = self.dense(&a.q, x, rows);
        let (o, _) = attention_forward(&q, k, v, self.config.d_model, &layout);
        self.dense(&a.o, &o, rows)
    }
}
