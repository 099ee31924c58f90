//! Layer primitives over packed row-major activations. Each forward returns
//! what its backward needs; backward accumulates parameter gradients and
//! returns the input gradient.

use rand::Rng;

use super::real::{gemm, matmul, Real, View};

/// Row-major `rows x d` activations.
pub type Act<T> = Vec<T>;

pub fn linear<T: Real>(x: &[T], rows: usize, w: &[T], b: &[T], d_in: usize, d_out: usize) -> Act<T> {
    let mut y = Vec::with_capacity(rows * d_out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    matmul(x, rows, d_in, false, w, d_in, d_out, false, &mut y, true);
    y
}

/// Accumulates `dw`, `db`; returns `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    dy: &[T],
    rows: usize,
    w: &[T],
    d_in: usize,
    d_out: usize,
    dw: &mut [T],
    db: &mut [T],
) -> Act<T> {
    matmul(x, rows, d_in, true, dy, rows, d_out, false, dw, true);
    for r in 0..rows {
        for (g, &d) in db.iter_mut().zip(&dy[r * d_out..(r + 1) * d_out]) {
            *g += d;
        }
    }
    let mut dx = vec![T::zero(); rows * d_in];
    matmul(dy, rows, d_out, false, w, d_in, d_out, true, &mut dx, false);
    dx
}

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache<T> {
    xhat: Act<T>,
    inv_std: Vec<T>,
}

pub fn layer_norm<T: Real>(x: &[T], rows: usize, d: usize, g: &[T], b: &[T]) -> (Act<T>, LnCache<T>) {
    let mut y = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut inv_std = Vec::with_capacity(rows);
    let dn = T::lit(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let inv = T::one() / (var + T::lit(LN_EPS)).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let h = (row[j] - mean) * inv;
            xhat[r * d + j] = h;
            y[r * d + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Real>(
    cache: &LnCache<T>,
    dy: &[T],
    d: usize,
    g: &[T],
    dg: &mut [T],
    db: &mut [T],
) -> Act<T> {
    let rows = cache.inv_std.len();
    let dn = T::lit(d as f64);
    let mut dx = vec![T::zero(); rows * d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            s1 += dxhat[j];
            s2 += dxhat[j] * xh[j];
        }
        let (m1, m2) = (s1 / dn, s2 / dn);
        for j in 0..d {
            dx[r * d + j] = cache.inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// Inverted dropout; `None` mask means identity.
pub fn dropout<T: Real>(x: &mut [T], p: f64, rng: Option<&mut dyn rand::RngCore>) -> Option<Vec<T>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len()).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
    for (v, &m) in x.iter_mut().zip(&mask) {
        *v = *v * m;
    }
    Some(mask)
}

pub fn dropout_backward<T: Real>(dy: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(mask) = mask {
        for (d, &m) in dy.iter_mut().zip(mask) {
            *d = *d * m;
        }
    }
}

pub fn sinusoid<T: Real>(pos: usize, d: usize, out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate().take(d) {
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        *o = T::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}

pub fn add_into<T: Real>(acc: &mut [T], x: &[T]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

/// Contiguous row ranges, one per sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    pub offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: &[usize]) -> Segments {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        for &l in lengths {
            offsets.push(offsets.last().unwrap() + l);
        }
        Segments { offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn start(&self, s: usize) -> usize {
        self.offsets[s]
    }

    pub fn length(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }
}

/// Parameter slots of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttnWeights<'a, T> {
    pub wq: &'a [T],
    pub bq: &'a [T],
    pub wk: &'a [T],
    pub bk: &'a [T],
    pub wv: &'a [T],
    pub bv: &'a [T],
    pub wo: &'a [T],
    pub bo: &'a [T],
}

pub struct AttnGrads<'a, T> {
    pub wq: &'a mut [T],
    pub bq: &'a mut [T],
    pub wk: &'a mut [T],
    pub bk: &'a mut [T],
    pub wv: &'a mut [T],
    pub bv: &'a mut [T],
    pub wo: &'a mut [T],
    pub bo: &'a mut [T],
}

pub struct AttnCache<T> {
    q: Act<T>,
    k: Act<T>,
    v: Act<T>,
    /// Per sentence, per head, `lq x lk` attention weights.
    probs: Vec<Vec<Act<T>>>,
    ctx: Act<T>,
}

/// Multi-head attention of query rows over key/value rows, sentence by
/// sentence. No masking: every query sees every key of its own sentence.
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Real>(
    xq: &[T],
    qseg: &Segments,
    xkv: &[T],
    kvseg: &Segments,
    d: usize,
    heads: usize,
    w: AttnWeights<'_, T>,
) -> (Act<T>, AttnCache<T>) {
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let q = linear(xq, qseg.total(), w.wq, w.bq, d, d);
    let k = linear(xkv, kvseg.total(), w.wk, w.bk, d, d);
    let v = linear(xkv, kvseg.total(), w.wv, w.bv, d, d);
    let mut ctx = vec![T::zero(); qseg.total() * d];
    let mut probs = Vec::with_capacity(qseg.len());
    for s in 0..qseg.len() {
        let (q0, lq, k0, lk) = (qseg.start(s), qseg.length(s), kvseg.start(s), kvseg.length(s));
        let mut per_head = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut p = vec![T::zero(); lq * lk];
            let vq = View::block(q0 * d + h * dh, lq, dh, d);
            let vk = View::block(k0 * d + h * dh, lk, dh, d);
            gemm(scale, &q, vq, &k, vk.t(), T::zero(), &mut p, View::dense(lq, lk));
            softmax_rows(&mut p, lk);
            gemm(T::one(), &p, View::dense(lq, lk), &v, vk, T::zero(), &mut ctx, vq);
            per_head.push(p);
        }
        probs.push(per_head);
    }
    let out = linear(&ctx, qseg.total(), w.wo, w.bo, d, d);
    (out, AttnCache { q, k, v, probs, ctx })
}

/// Returns `(dxq, dxkv)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Real>(
    cache: &AttnCache<T>,
    dout: &[T],
    xq: &[T],
    qseg: &Segments,
    xkv: &[T],
    kvseg: &Segments,
    d: usize,
    heads: usize,
    w: AttnWeights<'_, T>,
    g: AttnGrads<'_, T>,
) -> (Act<T>, Act<T>) {
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let (nq, nk) = (qseg.total(), kvseg.total());
    let dctx = linear_backward(&cache.ctx, dout, nq, w.wo, d, d, g.wo, g.bo);
    let mut dq = vec![T::zero(); nq * d];
    let mut dk = vec![T::zero(); nk * d];
    let mut dv = vec![T::zero(); nk * d];
    for s in 0..qseg.len() {
        let (q0, lq, k0, lk) = (qseg.start(s), qseg.length(s), kvseg.start(s), kvseg.length(s));
        for h in 0..heads {
            let p = &cache.probs[s][h];
            let vq = View::block(q0 * d + h * dh, lq, dh, d);
            let vk = View::block(k0 * d + h * dh, lk, dh, d);
            let vp = View::dense(lq, lk);
            // dV += P^T dC ; dP = dC V^T
            gemm(T::one(), p, vp.t(), &dctx, vq, T::one(), &mut dv, vk);
            let mut dp = vec![T::zero(); lq * lk];
            gemm(T::one(), &dctx, vq, &cache.v, vk.t(), T::zero(), &mut dp, vp);
            for r in 0..lq {
                let row = r * lk..(r + 1) * lk;
                let dot: T = p[row.clone()].iter().zip(&dp[row.clone()]).map(|(&a, &b)| a * b).sum();
                for c in row {
                    dp[c] = p[c] * (dp[c] - dot);
                }
            }
            gemm(scale, &dp, vp, &cache.k, vk, T::one(), &mut dq, vq);
            gemm(scale, &dp, vp.t(), &cache.q, vq, T::one(), &mut dk, vk);
        }
    }
    let dxq = linear_backward(xq, &dq, nq, w.wq, d, d, g.wq, g.bq);
    let mut dxkv = linear_backward(xkv, &dk, nk, w.wk, d, d, g.wk, g.bk);
    add_into(&mut dxkv, &linear_backward(xkv, &dv, nk, w.wv, d, d, g.wv, g.bv));
    (dxq, dxkv)
}

pub fn softmax_rows<T: Real>(x: &mut [T], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

pub struct FfnCache<T> {
    hidden: Act<T>,
}

/// `relu(x W1 + b1) W2 + b2`.
#[allow(clippy::too_many_arguments)]
pub fn ffn<T: Real>(x: &[T], rows: usize, d: usize, f: usize, w1: &[T], b1: &[T], w2: &[T], b2: &[T]) -> (Act<T>, FfnCache<T>) {
    let mut hidden = linear(x, rows, w1, b1, d, f);
    for h in hidden.iter_mut() {
        *h = h.max(T::zero());
    }
    let out = linear(&hidden, rows, w2, b2, f, d);
    (out, FfnCache { hidden })
}

#[allow(clippy::too_many_arguments)]
pub fn ffn_backward<T: Real>(
    cache: &FfnCache<T>,
    x: &[T],
    dy: &[T],
    rows: usize,
    d: usize,
    f: usize,
    w1: &[T],
    w2: &[T],
    grads: [&mut [T]; 4],
) -> Act<T> {
    let [dw1, db1, dw2, db2] = grads;
    let mut dh = linear_backward(&cache.hidden, dy, rows, w2, f, d, dw2, db2);
    for (g, &h) in dh.iter_mut().zip(&cache.hidden) {
        if h <= T::zero() {
            *g = T::zero();
        }
    }
    linear_backward(x, &dh, rows, w1, d, f, dw1, db1)
}
