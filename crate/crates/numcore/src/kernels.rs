//! Forward and backward kernels shared by the tape and by tape-free inference.

use crate::Scalar;

/// `c[m,n] = alpha * op(a) * op(b) + beta * c`.
///
/// `a` is stored `[m,k]` (or `[k,m]` when `trans_a`), `b` is stored `[k,n]`
/// (or `[n,k]` when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    beta: T,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = if beta == T::zero() { T::zero() } else { *x * beta });
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; strides describe exactly those buffers.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise numerically stable softmax, in place.
pub fn softmax_rows<T: Scalar>(data: &mut [T], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
}

/// Row-wise log-softmax, in place.
pub fn log_softmax_rows<T: Scalar>(data: &mut [T], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization over rows of width `cols`. Returns per-row mean and
/// reciprocal standard deviation for the backward pass.
pub fn layer_norm_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    cols: usize,
    out: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / cols;
    let n = T::lit(cols as f64);
    let eps = T::lit(LAYER_NORM_EPS);
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for (xr, or) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        for ((o, &v), (&g, &b)) in or.iter_mut().zip(xr).zip(gamma.iter().zip(beta)) {
            *o = (v - mean) * rstd * g + b;
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (means, rstds)
}

/// How query rows map onto key/value rows in a fused multi-head attention.
#[derive(Clone, Debug)]
pub struct AttnLayout {
    /// Number of query groups; queries are `[batch * tq, d]`.
    pub batch: usize,
    pub tq: usize,
    /// Key/value rows per kv group; keys are `[kv_groups * tk, d]`.
    pub tk: usize,
    pub heads: usize,
    /// Query `i` may only see keys `j <= i`.
    pub causal: bool,
    /// Validity of each key row, indexed like the keys.
    pub key_valid: Option<Vec<bool>>,
    /// Kv group used by each query group; identity when absent.
    pub kv_group: Option<Vec<usize>>,
}

impl AttnLayout {
    pub fn new(batch: usize, tq: usize, tk: usize, heads: usize) -> Self {
        AttnLayout { batch, tq, tk, heads, causal: false, key_valid: None, kv_group: None }
    }

    fn kv_of(&self, b: usize) -> usize {
        self.kv_group.as_ref().map_or(b, |g| g[b])
    }

    fn visible(&self, kb: usize, i: usize, j: usize) -> bool {
        if self.causal && j > i {
            return false;
        }
        self.key_valid.as_ref().is_none_or(|v| v[kb * self.tk + j])
    }

    pub fn kv_groups(&self) -> usize {
        self.kv_group.as_ref().map_or(self.batch, |g| g.iter().copied().max().map_or(0, |m| m + 1))
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Scaled dot-product attention. Returns the output `[batch*tq, d]` and the
/// attention probabilities `[batch, heads, tq, tk]`.
pub fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    layout: &AttnLayout,
) -> (Vec<T>, Vec<T>) {
    let AttnLayout { batch, tq, tk, heads, .. } = *layout;
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut out = vec![T::zero(); batch * tq * d];
    let mut probs = vec![T::zero(); batch * heads * tq * tk];
    let mut scores = vec![T::zero(); tk];
    for b in 0..batch {
        let kb = layout.kv_of(b);
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let qrow = &q[(b * tq + i) * d + off..][..dh];
                let mut max = T::neg_infinity();
                for (j, s) in scores.iter_mut().enumerate() {
                    if layout.visible(kb, i, j) {
                        let krow = &k[(kb * tk + j) * d + off..][..dh];
                        let dot = dot(qrow, krow) * scale;
                        *s = dot;
                        max = max.max(dot);
                    } else {
                        *s = T::neg_infinity();
                    }
                }
                if max == T::neg_infinity() {
                    continue;
                }
                let p = &mut probs[((b * heads + h) * tq + i) * tk..][..tk];
                let mut sum = T::zero();
                for (pj, &s) in p.iter_mut().zip(&scores) {
                    *pj = if s == T::neg_infinity() { T::zero() } else { (s - max).exp() };
                    sum += *pj;
                }
                let orow = &mut out[(b * tq + i) * d + off..][..dh];
                for (j, pj) in p.iter_mut().enumerate() {
                    *pj /= sum;
                    if *pj != T::zero() {
                        let vrow = &v[(kb * tk + j) * d + off..][..dh];
                        for (o, &vv) in orow.iter_mut().zip(vrow) {
                            *o += *pj * vv;
                        }
                    }
                }
            }
        }
    }
    (out, probs)
}

/// Gradients of [`attention_forward`], accumulated into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    d: usize,
    layout: &AttnLayout,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let AttnLayout { batch, tq, tk, heads, .. } = *layout;
    let dh = d / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut dp = vec![T::zero(); tk];
    for b in 0..batch {
        let kb = layout.kv_of(b);
        for h in 0..heads {
            let off = h * dh;
            for i in 0..tq {
                let p = &probs[((b * heads + h) * tq + i) * tk..][..tk];
                let qi = (b * tq + i) * d + off;
                let gout = &dout[qi..][..dh];
                let mut weighted = T::zero();
                for j in 0..tk {
                    if p[j] == T::zero() {
                        dp[j] = T::zero();
                        continue;
                    }
                    let kj = (kb * tk + j) * d + off;
                    let vrow = &v[kj..][..dh];
                    dp[j] = dot(gout, vrow);
                    weighted += p[j] * dp[j];
                    for (g, &go) in dv[kj..][..dh].iter_mut().zip(gout) {
                        *g += p[j] * go;
                    }
                }
                for j in 0..tk {
                    if p[j] == T::zero() {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - weighted) * scale;
                    let kj = (kb * tk + j) * d + off;
                    for c in 0..dh {
                        dq[qi + c] += ds * k[kj + c];
                        dk[kj + c] += ds * q[qi + c];
                    }
                }
            }
        }
    }
}
