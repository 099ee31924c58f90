//! Non-autoregressive encoder-decoder transformer.
//!
//! Pre-LN blocks, sinusoidal positions, no causal masks. The decoder input at
//! position `j` of `m` is the embedding of source token `floor(j * Tx / m)`
//! plus the position encoding. Activations of a batch are packed: all
//! sentences' rows are concatenated and attention runs per sentence.

pub mod checkpoint;
mod ops;
pub mod real;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::rng::{stream, Purpose};
use ops::{
    add_into, attention, attention_backward, dropout, dropout_backward, ffn, ffn_backward, layer_norm,
    layer_norm_backward, linear, linear_backward, sinusoid, Act, AttnCache, AttnGrads, AttnWeights, FfnCache,
    LnCache, Segments,
};
pub use real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ffn: usize,
    pub src_vocab: usize,
    /// Includes the reserved blank and epsilon slots.
    pub tgt_vocab: usize,
    pub max_len: usize,
    pub dropout: f64,
    /// Share the source embedding between encoder input and decoder input.
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn small(src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ffn: 256,
            src_vocab,
            tgt_vocab,
            max_len: 256,
            dropout: 0.1,
            tie_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_ffn == 0 || self.src_vocab == 0 || self.tgt_vocab < 3 || self.max_len == 0 {
            return bad("d_ffn, vocab sizes and max_len must be positive (tgt_vocab >= 3)".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ffn);
        let ln = 2 * d;
        let attn = 4 * (d * d + d);
        let ff = d * f + f + f * d + d;
        let embed = self.src_vocab * d * if self.tie_embeddings { 1 } else { 2 };
        let enc = self.n_enc_layers * (2 * ln + attn + ff) + if self.n_enc_layers > 0 { ln } else { 0 };
        let dec = self.n_dec_layers * (3 * ln + 2 * attn + ff) + if self.n_dec_layers > 0 { ln } else { 0 };
        embed + enc + dec + d * self.tgt_vocab + self.tgt_vocab
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.set("model.d_model", self.d_model);
        kv.set("model.n_heads", self.n_heads);
        kv.set("model.n_enc_layers", self.n_enc_layers);
        kv.set("model.n_dec_layers", self.n_dec_layers);
        kv.set("model.d_ffn", self.d_ffn);
        kv.set("model.src_vocab", self.src_vocab);
        kv.set("model.tgt_vocab", self.tgt_vocab);
        kv.set("model.max_len", self.max_len);
        kv.set("model.dropout", self.dropout);
        kv.set("model.tie_embeddings", self.tie_embeddings);
    }

    /// Override fields from any `model.*` keys present in `kv`.
    pub fn merge_kv(&self, kv: &KeyValues) -> Result<ModelConfig> {
        let c = ModelConfig {
            d_model: kv.parse_or("model.d_model", self.d_model)?,
            n_heads: kv.parse_or("model.n_heads", self.n_heads)?,
            n_enc_layers: kv.parse_or("model.n_enc_layers", self.n_enc_layers)?,
            n_dec_layers: kv.parse_or("model.n_dec_layers", self.n_dec_layers)?,
            d_ffn: kv.parse_or("model.d_ffn", self.d_ffn)?,
            src_vocab: kv.parse_or("model.src_vocab", self.src_vocab)?,
            tgt_vocab: kv.parse_or("model.tgt_vocab", self.tgt_vocab)?,
            max_len: kv.parse_or("model.max_len", self.max_len)?,
            dropout: kv.parse_or("model.dropout", self.dropout)?,
            tie_embeddings: kv.parse_or("model.tie_embeddings", self.tie_embeddings)?,
        };
        Ok(c)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<ModelConfig> {
        let c = ModelConfig {
            d_model: kv.require("model.d_model")?,
            n_heads: kv.require("model.n_heads")?,
            n_enc_layers: kv.require("model.n_enc_layers")?,
            n_dec_layers: kv.require("model.n_dec_layers")?,
            d_ffn: kv.require("model.d_ffn")?,
            src_vocab: kv.require("model.src_vocab")?,
            tgt_vocab: kv.require("model.tgt_vocab")?,
            max_len: kv.require("model.max_len")?,
            dropout: kv.require("model.dropout")?,
            tie_embeddings: kv.parse_or("model.tie_embeddings", true)?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug)]
struct LinearIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct LnIdx {
    g: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct AttnIdx {
    q: LinearIdx,
    k: LinearIdx,
    v: LinearIdx,
    o: LinearIdx,
}

#[derive(Clone, Copy, Debug)]
struct FfnIdx {
    l1: LinearIdx,
    l2: LinearIdx,
}

#[derive(Clone, Copy, Debug)]
struct EncLayerIdx {
    ln1: LnIdx,
    attn: AttnIdx,
    ln2: LnIdx,
    ffn: FfnIdx,
}

#[derive(Clone, Copy, Debug)]
struct DecLayerIdx {
    ln1: LnIdx,
    self_attn: AttnIdx,
    ln2: LnIdx,
    cross: AttnIdx,
    ln3: LnIdx,
    ffn: FfnIdx,
}

#[derive(Clone, Debug)]
struct Layout {
    src_embed: usize,
    dec_embed: usize,
    enc: Vec<EncLayerIdx>,
    enc_ln: Option<LnIdx>,
    dec: Vec<DecLayerIdx>,
    dec_ln: Option<LnIdx>,
    out: LinearIdx,
}

#[derive(Default)]
struct LayoutBuilder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.names.len() - 1
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) -> LinearIdx {
        LinearIdx { w: self.push(format!("{prefix}.w"), vec![d_in, d_out]), b: self.push(format!("{prefix}.b"), vec![d_out]) }
    }

    fn ln(&mut self, prefix: &str, d: usize) -> LnIdx {
        LnIdx { g: self.push(format!("{prefix}.g"), vec![d]), b: self.push(format!("{prefix}.b"), vec![d]) }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        AttnIdx {
            q: self.linear(&format!("{prefix}.q"), d, d),
            k: self.linear(&format!("{prefix}.k"), d, d),
            v: self.linear(&format!("{prefix}.v"), d, d),
            o: self.linear(&format!("{prefix}.o"), d, d),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnIdx {
        FfnIdx { l1: self.linear(&format!("{prefix}.fc1"), d, f), l2: self.linear(&format!("{prefix}.fc2"), f, d) }
    }
}

fn build_layout(c: &ModelConfig) -> (Layout, Vec<String>, Vec<Vec<usize>>) {
    let d = c.d_model;
    let mut b = LayoutBuilder::default();
    let src_embed = b.push("embed.src".into(), vec![c.src_vocab, d]);
    let dec_embed = if c.tie_embeddings { src_embed } else { b.push("embed.dec".into(), vec![c.src_vocab, d]) };
    let enc = (0..c.n_enc_layers)
        .map(|i| {
            let p = format!("enc.{i}");
            EncLayerIdx {
                ln1: b.ln(&format!("{p}.ln1"), d),
                attn: b.attn(&format!("{p}.self"), d),
                ln2: b.ln(&format!("{p}.ln2"), d),
                ffn: b.ffn(&p, d, c.d_ffn),
            }
        })
        .collect();
    let enc_ln = (c.n_enc_layers > 0).then(|| b.ln("enc.ln", d));
    let dec = (0..c.n_dec_layers)
        .map(|i| {
            let p = format!("dec.{i}");
            DecLayerIdx {
                ln1: b.ln(&format!("{p}.ln1"), d),
                self_attn: b.attn(&format!("{p}.self"), d),
                ln2: b.ln(&format!("{p}.ln2"), d),
                cross: b.attn(&format!("{p}.cross"), d),
                ln3: b.ln(&format!("{p}.ln3"), d),
                ffn: b.ffn(&p, d, c.d_ffn),
            }
        })
        .collect();
    let dec_ln = (c.n_dec_layers > 0).then(|| b.ln("dec.ln", d));
    let out = b.linear("out", d, c.tgt_vocab);
    (Layout { src_embed, dec_embed, enc, enc_ln, dec, dec_ln, out }, b.names, b.shapes)
}

/// Per-tensor gradient buffers in parameter order.
pub type Grads<T> = Vec<Vec<T>>;

/// Source sentences (token ids `< src_vocab`) and one decoder length each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub sources: Vec<Vec<usize>>,
    pub dec_lens: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
}

struct EncLayerCache<T> {
    ln1: LnCache<T>,
    h1: Act<T>,
    attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    h2: Act<T>,
    ffn: FfnCache<T>,
    drop2: Option<Vec<T>>,
}

struct DecLayerCache<T> {
    ln1: LnCache<T>,
    h1: Act<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    h2: Act<T>,
    cross: AttnCache<T>,
    drop2: Option<Vec<T>>,
    ln3: LnCache<T>,
    h3: Act<T>,
    ffn: FfnCache<T>,
    drop3: Option<Vec<T>>,
}

/// Everything `backward` needs from a forward pass.
pub struct Forward<T> {
    /// Packed `rows x tgt_vocab` pre-softmax scores.
    pub logits: Vec<T>,
    src_seg: Segments,
    dec_seg: Segments,
    src_tokens: Vec<usize>,
    dec_tokens: Vec<usize>,
    enc_drop: Option<Vec<T>>,
    enc_layers: Vec<EncLayerCache<T>>,
    enc_ln: Option<LnCache<T>>,
    memory: Act<T>,
    dec_drop: Option<Vec<T>>,
    dec_layers: Vec<DecLayerCache<T>>,
    dec_ln: Option<LnCache<T>>,
    dec_out: Act<T>,
}

impl<T: Real> Forward<T> {
    pub fn sentences(&self) -> usize {
        self.dec_seg.len()
    }

    /// Row range of sentence `s` in `logits` (in rows, not elements).
    pub fn rows(&self, s: usize) -> std::ops::Range<usize> {
        self.dec_seg.start(s)..self.dec_seg.start(s) + self.dec_seg.length(s)
    }

    pub fn total_rows(&self) -> usize {
        self.dec_seg.total()
    }
}

impl<T: Real> Model<T> {
    /// Xavier-uniform matrices, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
        config.validate()?;
        let (layout, names, shapes) = build_layout(config);
        let values = names
            .iter()
            .zip(&shapes)
            .enumerate()
            .map(|(i, (name, shape))| {
                let len: usize = shape.iter().product();
                if shape.len() == 2 {
                    let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    let mut rng = stream(seed, Purpose::Init, i as u64);
                    (0..len).map(|_| T::lit(rng.random_range(-bound..bound))).collect()
                } else if name.ends_with(".g") {
                    vec![T::one(); len]
                } else {
                    vec![T::zero(); len]
                }
            })
            .collect();
        Ok(Model { config: config.clone(), layout, names, shapes, values })
    }

    /// Build from named tensors, checking names and shapes against the config.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<(String, Vec<usize>, Vec<T>)>) -> Result<Model<T>> {
        config.validate()?;
        let (layout, names, shapes) = build_layout(config);
        if tensors.len() != names.len() {
            return Err(Error::Data(format!("expected {} tensors, found {}", names.len(), tensors.len())));
        }
        let mut values = Vec::with_capacity(names.len());
        for ((name, shape, data), (want_name, want_shape)) in tensors.into_iter().zip(names.iter().zip(&shapes)) {
            if &name != want_name || &shape != want_shape || data.len() != shape.iter().product::<usize>() {
                return Err(Error::Data(format!("tensor {name} {shape:?} does not match {want_name} {want_shape:?}")));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("tensor {name} has non-finite values")));
            }
            values.push(data);
        }
        Ok(Model { config: config.clone(), layout, names, shapes, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn values(&self) -> &[Vec<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.values.iter().map(|v| vec![T::zero(); v.len()]).collect()
    }

    /// Convert precision, keeping the structure.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.iter().map(|v| v.iter().map(|x| U::lit(x.to_f64().unwrap())).collect()).collect(),
        }
    }

    /// Same weights with a separate decoder-input embedding initialized to the shared one.
    pub fn untied(&self) -> Model<T> {
        let mut config = self.config.clone();
        if !config.tie_embeddings {
            return self.clone();
        }
        config.tie_embeddings = false;
        let (layout, names, shapes) = build_layout(&config);
        let mut values = Vec::with_capacity(names.len());
        values.push(self.values[0].clone());
        values.push(self.values[0].clone());
        values.extend(self.values[1..].iter().cloned());
        Model { config, layout, names, shapes, values }
    }

    fn attn_weights(&self, a: AttnIdx) -> AttnWeights<'_, T> {
        let v = &self.values;
        AttnWeights {
            wq: &v[a.q.w],
            bq: &v[a.q.b],
            wk: &v[a.k.w],
            bk: &v[a.k.b],
            wv: &v[a.v.w],
            bv: &v[a.v.b],
            wo: &v[a.o.w],
            bo: &v[a.o.b],
        }
    }

    fn embed(&self, table: usize, tokens: &[usize], seg: &Segments) -> Act<T> {
        let d = self.config.d_model;
        let scale = T::lit((d as f64).sqrt());
        let mut x = vec![T::zero(); tokens.len() * d];
        let mut pe = vec![T::zero(); d];
        for s in 0..seg.len() {
            for p in 0..seg.length(s) {
                let r = seg.start(s) + p;
                sinusoid(p, d, &mut pe);
                let e = &self.values[table][tokens[r] * d..(tokens[r] + 1) * d];
                for j in 0..d {
                    x[r * d + j] = e[j] * scale + pe[j];
                }
            }
        }
        x
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.sources.len() != batch.dec_lens.len() {
            return Err(Error::Shape("one decoder length per source sentence required".into()));
        }
        for (src, &m) in batch.sources.iter().zip(&batch.dec_lens) {
            if src.is_empty() || m == 0 {
                return Err(Error::Shape("empty source or decoder length".into()));
            }
            if src.len() > self.config.max_len || m > self.config.max_len {
                return Err(Error::Shape(format!(
                    "length {} exceeds max_len {}",
                    src.len().max(m),
                    self.config.max_len
                )));
            }
            if let Some(&t) = src.iter().find(|&&t| t >= self.config.src_vocab) {
                return Err(Error::Shape(format!("source token {t} outside vocabulary of {}", self.config.src_vocab)));
            }
        }
        Ok(())
    }

    /// Forward pass. Dropout is active iff `dropout_seed` is given.
    pub fn forward(&self, batch: &Batch, dropout_seed: Option<(u64, u64)>) -> Result<Forward<T>> {
        self.check_batch(batch)?;
        let c = &self.config;
        let d = c.d_model;
        let mut rng = dropout_seed.map(|(seed, index)| stream(seed, Purpose::Dropout, index));
        let mut drop = |x: &mut [T]| dropout(x, c.dropout, rng.as_mut().map(|r| r as &mut dyn rand::RngCore));

        let src_seg = Segments::from_lengths(&batch.sources.iter().map(Vec::len).collect::<Vec<_>>());
        let dec_seg = Segments::from_lengths(&batch.dec_lens);
        let src_tokens: Vec<usize> = batch.sources.concat();
        let mut dec_tokens = Vec::with_capacity(dec_seg.total());
        for (src, &m) in batch.sources.iter().zip(&batch.dec_lens) {
            dec_tokens.extend((0..m).map(|j| src[j * src.len() / m]));
        }
        let (ns, nd) = (src_seg.total(), dec_seg.total());

        let mut x = self.embed(self.layout.src_embed, &src_tokens, &src_seg);
        let enc_drop = drop(&mut x);
        let mut enc_layers = Vec::with_capacity(self.layout.enc.len());
        for l in &self.layout.enc {
            let v = &self.values;
            let (h1, ln1) = layer_norm(&x, ns, d, &v[l.ln1.g], &v[l.ln1.b]);
            let (mut a, attn) = attention(&h1, &src_seg, &h1, &src_seg, d, c.n_heads, self.attn_weights(l.attn));
            let drop1 = drop(&mut a);
            add_into(&mut x, &a);
            let (h2, ln2) = layer_norm(&x, ns, d, &v[l.ln2.g], &v[l.ln2.b]);
            let f = l.ffn;
            let (mut o, ffn_cache) =
                ffn(&h2, ns, d, c.d_ffn, &v[f.l1.w], &v[f.l1.b], &v[f.l2.w], &v[f.l2.b]);
            let drop2 = drop(&mut o);
            add_into(&mut x, &o);
            enc_layers.push(EncLayerCache { ln1, h1, attn, drop1, ln2, h2, ffn: ffn_cache, drop2 });
        }
        let (memory, enc_ln) = match self.layout.enc_ln {
            Some(ln) => {
                let (m, cache) = layer_norm(&x, ns, d, &self.values[ln.g], &self.values[ln.b]);
                (m, Some(cache))
            }
            None => (x, None),
        };

        let mut y = self.embed(self.layout.dec_embed, &dec_tokens, &dec_seg);
        let dec_drop = drop(&mut y);
        let mut dec_layers = Vec::with_capacity(self.layout.dec.len());
        for l in &self.layout.dec {
            let v = &self.values;
            let (h1, ln1) = layer_norm(&y, nd, d, &v[l.ln1.g], &v[l.ln1.b]);
            let (mut a, self_attn) =
                attention(&h1, &dec_seg, &h1, &dec_seg, d, c.n_heads, self.attn_weights(l.self_attn));
            let drop1 = drop(&mut a);
            add_into(&mut y, &a);
            let (h2, ln2) = layer_norm(&y, nd, d, &v[l.ln2.g], &v[l.ln2.b]);
            let (mut a2, cross) =
                attention(&h2, &dec_seg, &memory, &src_seg, d, c.n_heads, self.attn_weights(l.cross));
            let drop2 = drop(&mut a2);
            add_into(&mut y, &a2);
            let (h3, ln3) = layer_norm(&y, nd, d, &v[l.ln3.g], &v[l.ln3.b]);
            let f = l.ffn;
            let (mut o, ffn_cache) =
                ffn(&h3, nd, d, c.d_ffn, &v[f.l1.w], &v[f.l1.b], &v[f.l2.w], &v[f.l2.b]);
            let drop3 = drop(&mut o);
            add_into(&mut y, &o);
            dec_layers.push(DecLayerCache { ln1, h1, self_attn, drop1, ln2, h2, cross, drop2, ln3, h3, ffn: ffn_cache, drop3 });
        }
        let (dec_out, dec_ln) = match self.layout.dec_ln {
            Some(ln) => {
                let (o, cache) = layer_norm(&y, nd, d, &self.values[ln.g], &self.values[ln.b]);
                (o, Some(cache))
            }
            None => (y, None),
        };
        let out = self.layout.out;
        let logits = linear(&dec_out, nd, &self.values[out.w], &self.values[out.b], d, c.tgt_vocab);
        Ok(Forward {
            logits,
            src_seg,
            dec_seg,
            src_tokens,
            dec_tokens,
            enc_drop,
            enc_layers,
            enc_ln,
            memory,
            dec_drop,
            dec_layers,
            dec_ln,
            dec_out,
        })
    }

    /// Reverse-mode gradients of a scalar whose gradient w.r.t. the packed
    /// logits is `dlogits`.
    pub fn backward(&self, fwd: &Forward<T>, dlogits: &[T]) -> Result<Grads<T>> {
        let c = &self.config;
        let d = c.d_model;
        if dlogits.len() != fwd.logits.len() {
            return Err(Error::Shape(format!(
                "logit gradient has {} values, forward produced {}",
                dlogits.len(),
                fwd.logits.len()
            )));
        }
        let (ns, nd) = (fwd.src_seg.total(), fwd.dec_seg.total());
        let mut g = self.zero_grads();
        let v = &self.values;
        let out = self.layout.out;
        let (gw, gb) = two_mut(&mut g, out.w, out.b);
        let mut dy = linear_backward(&fwd.dec_out, dlogits, nd, &v[out.w], d, c.tgt_vocab, gw, gb);
        if let (Some(ln), Some(cache)) = (self.layout.dec_ln, &fwd.dec_ln) {
            let (gg, gb) = two_mut(&mut g, ln.g, ln.b);
            dy = layer_norm_backward(cache, &dy, d, &v[ln.g], gg, gb);
        }
        let mut dmem = vec![T::zero(); ns * d];
        for (l, cache) in self.layout.dec.iter().zip(&fwd.dec_layers).rev() {
            let f = l.ffn;
            let mut dout = dy.clone();
            dropout_backward(&mut dout, &cache.drop3);
            let dh3 = {
                let [a, b, cc, e] = four_mut(&mut g, [f.l1.w, f.l1.b, f.l2.w, f.l2.b]);
                ffn_backward(&cache.ffn, &cache.h3, &dout, nd, d, c.d_ffn, &v[f.l1.w], &v[f.l2.w], [a, b, cc, e])
            };
            let (gg, gb) = two_mut(&mut g, l.ln3.g, l.ln3.b);
            add_into(&mut dy, &layer_norm_backward(&cache.ln3, &dh3, d, &v[l.ln3.g], gg, gb));

            let mut da2 = dy.clone();
            dropout_backward(&mut da2, &cache.drop2);
            let (dh2, dm) = attention_backward(
                &cache.cross,
                &da2,
                &cache.h2,
                &fwd.dec_seg,
                &fwd.memory,
                &fwd.src_seg,
                d,
                c.n_heads,
                self.attn_weights(l.cross),
                attn_grads(&mut g, l.cross),
            );
            add_into(&mut dmem, &dm);
            let (gg, gb) = two_mut(&mut g, l.ln2.g, l.ln2.b);
            add_into(&mut dy, &layer_norm_backward(&cache.ln2, &dh2, d, &v[l.ln2.g], gg, gb));

            let mut da1 = dy.clone();
            dropout_backward(&mut da1, &cache.drop1);
            let (dq, dkv) = attention_backward(
                &cache.self_attn,
                &da1,
                &cache.h1,
                &fwd.dec_seg,
                &cache.h1,
                &fwd.dec_seg,
                d,
                c.n_heads,
                self.attn_weights(l.self_attn),
                attn_grads(&mut g, l.self_attn),
            );
            let mut dh1 = dq;
            add_into(&mut dh1, &dkv);
            let (gg, gb) = two_mut(&mut g, l.ln1.g, l.ln1.b);
            add_into(&mut dy, &layer_norm_backward(&cache.ln1, &dh1, d, &v[l.ln1.g], gg, gb));
        }
        dropout_backward(&mut dy, &fwd.dec_drop);
        self.embed_backward(&mut g[self.layout.dec_embed], &fwd.dec_tokens, &dy);

        let mut dx = dmem;
        if let (Some(ln), Some(cache)) = (self.layout.enc_ln, &fwd.enc_ln) {
            let (gg, gb) = two_mut(&mut g, ln.g, ln.b);
            dx = layer_norm_backward(cache, &dx, d, &v[ln.g], gg, gb);
        }
        for (l, cache) in self.layout.enc.iter().zip(&fwd.enc_layers).rev() {
            let f = l.ffn;
            let mut dout = dx.clone();
            dropout_backward(&mut dout, &cache.drop2);
            let dh2 = {
                let [a, b, cc, e] = four_mut(&mut g, [f.l1.w, f.l1.b, f.l2.w, f.l2.b]);
                ffn_backward(&cache.ffn, &cache.h2, &dout, ns, d, c.d_ffn, &v[f.l1.w], &v[f.l2.w], [a, b, cc, e])
            };
            let (gg, gb) = two_mut(&mut g, l.ln2.g, l.ln2.b);
            add_into(&mut dx, &layer_norm_backward(&cache.ln2, &dh2, d, &v[l.ln2.g], gg, gb));

            let mut da = dx.clone();
            dropout_backward(&mut da, &cache.drop1);
            let (dq, dkv) = attention_backward(
                &cache.attn,
                &da,
                &cache.h1,
                &fwd.src_seg,
                &cache.h1,
                &fwd.src_seg,
                d,
                c.n_heads,
                self.attn_weights(l.attn),
                attn_grads(&mut g, l.attn),
            );
            let mut dh1 = dq;
            add_into(&mut dh1, &dkv);
            let (gg, gb) = two_mut(&mut g, l.ln1.g, l.ln1.b);
            add_into(&mut dx, &layer_norm_backward(&cache.ln1, &dh1, d, &v[l.ln1.g], gg, gb));
        }
        dropout_backward(&mut dx, &fwd.enc_drop);
        self.embed_backward(&mut g[self.layout.src_embed], &fwd.src_tokens, &dx);
        Ok(g)
    }

    fn embed_backward(&self, grad: &mut [T], tokens: &[usize], dx: &[T]) {
        let d = self.config.d_model;
        let scale = T::lit((d as f64).sqrt());
        for (r, &t) in tokens.iter().enumerate() {
            for j in 0..d {
                grad[t * d + j] += dx[r * d + j] * scale;
            }
        }
    }
}

fn two_mut<T>(g: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    let [x, y] = g.get_disjoint_mut([a, b]).expect("distinct tensor slots");
    (x.as_mut_slice(), y.as_mut_slice())
}

fn four_mut<T>(g: &mut [Vec<T>], idx: [usize; 4]) -> [&mut [T]; 4] {
    g.get_disjoint_mut(idx).expect("distinct tensor slots").map(Vec::as_mut_slice)
}

fn attn_grads<T>(g: &mut [Vec<T>], a: AttnIdx) -> AttnGrads<'_, T> {
    let [wq, bq, wk, bk, wv, bv, wo, bo] = g
        .get_disjoint_mut([a.q.w, a.q.b, a.k.w, a.k.b, a.v.w, a.v.b, a.o.w, a.o.b])
        .expect("distinct tensor slots")
        .map(Vec::as_mut_slice);
    AttnGrads { wq, bq, wk, bk, wv, bv, wo, bo }
}
