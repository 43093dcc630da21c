//! Tape-free forward pass with key/value caching for step-wise decoding.

use super::{Attn, Dense2, Layout, Ln, ModelConfig, ParameterSet};
use crate::error::{ColoError, Result};
use crate::tensor::ops::{attention_output, attention_probs, gelu, layer_norm_forward};
use crate::tensor::{gemm, AttnMask, MatRef, Real, Tensor};

/// Encoder output plus the cross-attention keys and values of every
/// decoder layer.
#[derive(Debug, Clone)]
pub struct EncodedSource<F> {
    /// `[S, d]` final-norm encoder states.
    pub states: Vec<F>,
    pub len: usize,
    cross: Vec<(Vec<F>, Vec<F>)>,
}

/// Self-attention keys and values of the tokens fed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderCache<F> {
    pos: usize,
    layers: Vec<(Vec<F>, Vec<F>)>,
}

impl<F> DecoderCache<F> {
    /// Number of tokens consumed.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

pub struct Incremental<'a, F> {
    w: Layout<&'a Tensor<F>>,
    config: &'a ModelConfig,
}

fn linear<F: Real>(x: &[F], rows: usize, w: &Tensor<F>, b: &Tensor<F>) -> Vec<F> {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let mut out: Vec<F> = b.data().iter().copied().cycle().take(rows * dout).collect();
    gemm(F::one(), x, MatRef::dense(rows, din), w.data(), MatRef::dense(din, dout), F::one(), &mut out, MatRef::dense(rows, dout));
    out
}

fn norm<F: Real>(x: &[F], ln: &Ln<&Tensor<F>>) -> Vec<F> {
    let d = ln.g.numel();
    layer_norm_forward(x, ln.g.data(), ln.b.data(), d).0
}

fn add_into<F: Real>(x: &mut [F], y: &[F]) {
    x.iter_mut().zip(y).for_each(|(a, &b)| *a = *a + b);
}

fn feed_forward<F: Real>(x: &[F], rows: usize, f: &Dense2<&Tensor<F>>) -> Vec<F> {
    let mut h = linear(x, rows, f.w1, f.b1);
    h.iter_mut().for_each(|v| *v = gelu(*v));
    linear(&h, rows, f.w2, f.b2)
}

#[allow(clippy::too_many_arguments)]
fn attend<F: Real>(q: &[F], k: &[F], v: &[F], t: usize, s: usize, d: usize, heads: usize, mask: &AttnMask) -> Vec<F> {
    let scale = F::of(1.0 / ((d / heads) as f64).sqrt());
    let probs = attention_probs(q, k, t, s, d, heads, scale, mask);
    attention_output(&probs, None, v, t, s, d, heads)
}

#[allow(clippy::too_many_arguments)]
fn attention<F: Real>(a: &Attn<&Tensor<F>>, xq: &[F], t: usize, kv: (&[F], &[F]), s: usize, d: usize, heads: usize, mask: &AttnMask) -> Vec<F> {
    let q = linear(xq, t, a.wq, a.bq);
    let att = attend(&q, kv.0, kv.1, t, s, d, heads, mask);
    linear(&att, t, a.wo, a.bo)
}

impl<'a, F: Real> Incremental<'a, F> {
    pub fn new(params: &'a ParameterSet<F>, config: &'a ModelConfig) -> Result<Self> {
        Ok(Self { w: params.layout(config)?, config })
    }

    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    /// Encodes an unpadded source.
    pub fn encode(&self, src: &[usize]) -> Result<EncodedSource<F>> {
        let (c, d) = (self.config, self.config.d_model);
        if src.is_empty() || src.len() > c.max_src_len {
            return Err(ColoError::Length { what: "source", len: src.len(), max: c.max_src_len });
        }
        let s = src.len();
        let mut x = Vec::with_capacity(s * d);
        for (p, &id) in src.iter().enumerate() {
            x.extend(self.row(self.w.embed, id)?.iter().zip(self.row(self.w.enc_pos, p)?).map(|(&a, &b)| a + b));
        }
        let mask = AttnMask::padding(vec![true; s]);
        for layer in &self.w.enc {
            let h = norm(&x, &layer.ln1);
            let k = linear(&h, s, layer.attn.wk, layer.attn.bk);
            let v = linear(&h, s, layer.attn.wv, layer.attn.bv);
            add_into(&mut x, &attention(&layer.attn, &h, s, (&k, &v), s, d, c.n_heads, &mask));
            let h = norm(&x, &layer.ln2);
            add_into(&mut x, &feed_forward(&h, s, &layer.ffn));
        }
        let states = norm(&x, &self.w.enc_ln);
        let cross =
            self.w.dec.iter().map(|l| (linear(&states, s, l.cross_attn.wk, l.cross_attn.bk), linear(&states, s, l.cross_attn.wv, l.cross_attn.bv))).collect();
        Ok(EncodedSource { states, len: s, cross })
    }

    pub fn start(&self) -> DecoderCache<F> {
        DecoderCache { pos: 0, layers: vec![(Vec::new(), Vec::new()); self.config.n_dec_layers] }
    }

    fn row<'t>(&self, table: &'t Tensor<F>, i: usize) -> Result<&'t [F]> {
        let d = self.config.d_model;
        let n = table.shape()[0];
        if i >= n {
            return Err(ColoError::Vocabulary { id: i, size: n });
        }
        Ok(&table.data()[i * d..(i + 1) * d])
    }

    /// Feeds one token and returns the next-token logits `[V]`.
    pub fn step(&self, enc: &EncodedSource<F>, cache: &mut DecoderCache<F>, token: usize) -> Result<Vec<F>> {
        let (c, d) = (self.config, self.config.d_model);
        if cache.pos >= c.max_tgt_len {
            return Err(ColoError::Length { what: "target", len: cache.pos + 1, max: c.max_tgt_len });
        }
        let mut x: Vec<F> = self.row(self.w.embed, token)?.iter().zip(self.row(self.w.dec_pos, cache.pos)?).map(|(&a, &b)| a + b).collect();
        let t = cache.pos + 1;
        let self_mask = AttnMask::padding(vec![true; t]);
        let cross_mask = AttnMask::padding(vec![true; enc.len]);
        for ((layer, kv), cross) in self.w.dec.iter().zip(cache.layers.iter_mut()).zip(&enc.cross) {
            let h = norm(&x, &layer.ln1);
            kv.0.extend(linear(&h, 1, layer.self_attn.wk, layer.self_attn.bk));
            kv.1.extend(linear(&h, 1, layer.self_attn.wv, layer.self_attn.bv));
            add_into(&mut x, &attention(&layer.self_attn, &h, 1, (&kv.0, &kv.1), t, d, c.n_heads, &self_mask));
            let h = norm(&x, &layer.ln2);
            add_into(&mut x, &attention(&layer.cross_attn, &h, 1, (&cross.0, &cross.1), enc.len, d, c.n_heads, &cross_mask));
            let h = norm(&x, &layer.ln3);
            add_into(&mut x, &feed_forward(&h, 1, &layer.ffn));
        }
        cache.pos += 1;
        let out = norm(&x, &self.w.dec_ln);
        let v = c.vocab_size;
        let mut logits = vec![F::zero(); v];
        gemm(F::one(), &out, MatRef::dense(1, d), self.w.embed.data(), MatRef::dense(v, d).t(), F::zero(), &mut logits, MatRef::dense(1, v));
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(ColoError::NonFinite { op: "decoder step" });
        }
        Ok(logits)
    }
}
