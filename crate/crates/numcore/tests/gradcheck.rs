//! Tape gradients against central finite differences in 64-bit mode.

use morphome_numcore::{grad_check, AttnLayout, GradCheckOptions, Graph, NumError, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn weights(g: &mut Graph<'_, f64>, seed: u64, shape: &[usize]) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.input(random(&mut rng, shape, 1.0))
}

/// Projects an arbitrary output onto a fixed random direction.
fn probe(g: &mut Graph<'_, f64>, out: Var) -> Result<Var, NumError> {
    let w = weights(g, 99, g.shape(out).to_vec().as_slice());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

#[test]
fn linear_function_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&mut rng, &[3, 2], 1.0)).unwrap();
    let x = random(&mut rng, &[4, 3], 1.0);
    let report = grad_check(
        &mut store,
        |g| {
            let xv = g.input(x.clone());
            let wv = g.param(w);
            let y = g.matmul(xv, wv)?;
            probe(g, y)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_abs_error < 1e-9, "{:?}", report);
    assert_eq!(report.checked, 6);
}

#[test]
fn two_layer_mlp_below_1e6() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let w1 = store.add("w1", random(&mut rng, &[5, 8], 0.7)).unwrap();
    let b1 = store.add("b1", random(&mut rng, &[8], 0.3)).unwrap();
    let w2 = store.add("w2", random(&mut rng, &[8, 4], 0.7)).unwrap();
    let b2 = store.add("b2", random(&mut rng, &[4], 0.3)).unwrap();
    let x = random(&mut rng, &[6, 5], 1.0);
    let targets = [0, 3, 1, 2, 2, 0];
    let report = grad_check(
        &mut store,
        |g| {
            let xv = g.input(x.clone());
            let (w1, b1, w2, b2) = (g.param(w1), g.param(b1), g.param(w2), g.param(b2));
            let h = g.matmul(xv, w1)?;
            let h = g.add_row(h, b1)?;
            let h = g.relu(h);
            let o = g.matmul(h, w2)?;
            let o = g.add_row(o, b2)?;
            g.smoothed_cross_entropy(o, &targets, &[true; 6], 0.1)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(1e-6), "{:?}", report);
}

#[test]
fn every_differentiable_op_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&mut rng, &[4, 3], 1.0)).unwrap();
    let b = store.add("b", random(&mut rng, &[3, 4], 1.0)).unwrap();
    let c = store.add("c", random(&mut rng, &[4, 3], 1.0)).unwrap();
    let table = store.add("table", random(&mut rng, &[5, 4], 1.0)).unwrap();
    let gamma = store.add("gamma", random(&mut rng, &[4], 1.0)).unwrap();
    let beta = store.add("beta", random(&mut rng, &[4], 1.0)).unwrap();
    let report = grad_check(
        &mut store,
        |g| {
            let (a, b, c) = (g.param(a), g.param(b), g.param(c));
            let (table, gamma, beta) = (g.param(table), g.param(gamma), g.param(beta));
            let ab = g.matmul(a, b)?;
            let abt = g.matmul_t(a, c, true)?;
            let s = g.add(ab, abt)?;
            let sm = g.softmax(s);
            let t = g.transpose(sm)?;
            let m = g.mul(t, sm)?;
            let r = g.relu(m);
            let sc = g.scale(r, 1.7);
            let e = g.embedding(table, &[4, 0, 4, 2])?;
            let ln = g.layer_norm(e, gamma, beta)?;
            let sc3 = g.slice_rows(sc, 0, 3)?;
            let stacked = g.concat_rows(&[ln, sc3])?;
            let top = g.slice_rows(stacked, 1, 4)?;
            let sp = g.scatter_rows(top, &[5, 1, 0, 2], 6)?;
            let tt = g.transpose(sp)?;
            let rb = g.add_row(sp, gamma)?;
            let left = probe(g, rb)?;
            let right = probe(g, tt)?;
            let both = g.add(left, right)?;
            Ok(both)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(1e-6), "{:?}", report);
}

#[test]
fn masked_and_causal_attention_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let q = store.add("q", random(&mut rng, &[6, 4], 1.0)).unwrap();
    let k = store.add("k", random(&mut rng, &[6, 4], 1.0)).unwrap();
    let v = store.add("v", random(&mut rng, &[6, 4], 1.0)).unwrap();
    let report = grad_check(
        &mut store,
        |g| {
            let (q, k, v) = (g.param(q), g.param(k), g.param(v));
            let mut padded = AttnLayout::new(2, 3, 3, 2);
            padded.key_valid = Some(vec![true, true, false, true, false, false]);
            let mut causal = AttnLayout::new(2, 3, 3, 2);
            causal.causal = true;
            let x = g.attention(q, k, v, padded)?;
            let y = g.attention(x, k, q, causal)?;
            probe(g, y)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(1e-6), "{:?}", report);
}

/// Post-norm encoder block: self-attention, residual, layer norm, ReLU
/// feed-forward, residual, layer norm.
fn block(g: &mut Graph<'_, f64>, store: &ParamStore<f64>, prefix: &str, x: Var, layout: &AttnLayout) -> Result<Var, NumError> {
    let p = |g: &mut Graph<'_, f64>, n: &str| g.param(store.id(&format!("{}.{}", prefix, n)).unwrap());
    let proj = |g: &mut Graph<'_, f64>, x: Var, n: &str| -> Result<Var, NumError> {
        let w = p(g, &format!("{}.w", n));
        let b = p(g, &format!("{}.b", n));
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    };
    let q = proj(g, x, "q")?;
    let k = proj(g, x, "k")?;
    let v = proj(g, x, "v")?;
    let a = g.attention(q, k, v, layout.clone())?;
    let o = proj(g, a, "o")?;
    let r = g.add(x, o)?;
    let (g1, b1) = (p(g, "ln1.g"), p(g, "ln1.b"));
    let h = g.layer_norm(r, g1, b1)?;
    let f = proj(g, h, "ff1")?;
    let f = g.relu(f);
    let f = proj(g, f, "ff2")?;
    let r = g.add(h, f)?;
    let (g2, b2) = (p(g, "ln2.g"), p(g, "ln2.b"));
    g.layer_norm(r, g2, b2)
}

fn add_block(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, prefix: &str, d: usize, ff: usize) {
    for (n, i, o) in [("q", d, d), ("k", d, d), ("v", d, d), ("o", d, d), ("ff1", d, ff), ("ff2", ff, d)] {
        let bound = 1.0 / (i as f64).sqrt();
        store.add(format!("{}.{}.w", prefix, n), random(rng, &[i, o], bound)).unwrap();
        store.add(format!("{}.{}.b", prefix, n), random(rng, &[o], bound)).unwrap();
    }
    for n in ["ln1", "ln2"] {
        store.add(format!("{}.{}.g", prefix, n), Tensor::new(&[d], (0..d).map(|_| 1.0 + rng.gen_range(-0.2..0.2)).collect()).unwrap()).unwrap();
        store.add(format!("{}.{}.b", prefix, n), random(rng, &[d], 0.1)).unwrap();
    }
}

#[test]
fn tiny_transformer_block_below_1e5() {
    let (d, ff) = (8, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    add_block(&mut store, &mut rng, "blk", d, ff);
    let x = random(&mut rng, &[2 * 4, d], 1.0);
    let mut layout = AttnLayout::new(2, 4, 4, 2);
    layout.key_valid = Some(vec![true, true, true, true, true, true, true, false]);
    let frozen = store.clone();
    let report = grad_check(
        &mut store,
        |g| {
            let xv = g.input(x.clone());
            let y = block(g, &frozen, "blk", xv, &layout)?;
            probe(g, y)
        },
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(1e-5), "{:?}", report);
}
