//! Pre-norm transformer encoder-decoder with tied embeddings, pooled
//! relation embeddings and two projection networks.
//!
//! Every parameter has a dotted path name (`enc.0.attn.wq`). The typed
//! [`Layout`] is built from the same naming function whatever the handle
//! type: tape variables for training, tensor references for inference.

mod forward;
mod inference;

pub use forward::{decode, encode, lm_loss, project, relation_embedding, DecoderOutput, LmPass, RelationEmbedding, RepSource};
pub use inference::{DecoderCache, EncodedSource, Incremental};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS};
use crate::error::{ColoError, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub dropout_rate: f64,
    pub proj_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 256,
            max_src_len: 48,
            max_tgt_len: 160,
            dropout_rate: 0.1,
            proj_hidden: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(ColoError::Config(m.to_string()));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.proj_hidden == 0 {
            return err("sizes must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return err("d_model must be divisible by n_heads");
        }
        if self.max_src_len < 2 || self.max_tgt_len < 2 {
            return err("maximum lengths must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return err("dropout rate must be in [0, 1)");
        }
        Ok(())
    }

    /// Number of scalar parameters, counted from the architecture.
    pub fn param_count(&self) -> usize {
        let (d, f, p) = (self.d_model, self.d_ff, self.proj_hidden);
        let ln = 2 * d;
        let attn = 4 * d * d + 4 * d;
        let ffn = d * f + f + f * d + d;
        let proj = d * p + p + p * d + d;
        let enc_layer = 2 * ln + attn + ffn;
        let dec_layer = 3 * ln + 2 * attn + ffn;
        self.vocab_size * d + (self.max_src_len + self.max_tgt_len) * d + self.n_enc_layers * enc_layer + ln + self.n_dec_layers * dec_layer + ln + 2 * proj
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ln<T> {
    pub g: T,
    pub b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attn<T> {
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub bq: T,
    pub bk: T,
    pub bv: T,
    pub bo: T,
}

/// Two-layer map `x W1 + b1 -> act -> W2 + b2`; used for both the
/// position-wise feed-forward blocks and the projection networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense2<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncLayer<T> {
    pub ln1: Ln<T>,
    pub attn: Attn<T>,
    pub ln2: Ln<T>,
    pub ffn: Dense2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecLayer<T> {
    pub ln1: Ln<T>,
    pub self_attn: Attn<T>,
    pub ln2: Ln<T>,
    pub cross_attn: Attn<T>,
    pub ln3: Ln<T>,
    pub ffn: Dense2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout<T> {
    /// Shared by encoder input, decoder input and the output head.
    pub embed: T,
    pub enc_pos: T,
    pub dec_pos: T,
    pub enc: Vec<EncLayer<T>>,
    pub enc_ln: Ln<T>,
    pub dec: Vec<DecLayer<T>>,
    pub dec_ln: Ln<T>,
    pub proj_enc: Dense2<T>,
    pub proj_dec: Dense2<T>,
}

type Make<'f, T> = dyn FnMut(String, Vec<usize>, Init) -> Result<T> + 'f;

fn ln<T>(f: &mut Make<T>, prefix: &str, d: usize) -> Result<Ln<T>> {
    Ok(Ln { g: f(format!("{prefix}.g"), vec![d], Init::Ones)?, b: f(format!("{prefix}.b"), vec![d], Init::Zeros)? })
}

fn attn<T>(f: &mut Make<T>, prefix: &str, d: usize) -> Result<Attn<T>> {
    let mut w = |n: &str| f(format!("{prefix}.{n}"), vec![d, d], Init::Normal);
    let (wq, wk, wv, wo) = (w("wq")?, w("wk")?, w("wv")?, w("wo")?);
    let mut b = |n: &str| f(format!("{prefix}.{n}"), vec![d], Init::Zeros);
    Ok(Attn { wq, wk, wv, wo, bq: b("bq")?, bk: b("bk")?, bv: b("bv")?, bo: b("bo")? })
}

fn dense2<T>(f: &mut Make<T>, prefix: &str, d: usize, hidden: usize) -> Result<Dense2<T>> {
    Ok(Dense2 {
        w1: f(format!("{prefix}.w1"), vec![d, hidden], Init::Normal)?,
        b1: f(format!("{prefix}.b1"), vec![hidden], Init::Zeros)?,
        w2: f(format!("{prefix}.w2"), vec![hidden, d], Init::Normal)?,
        b2: f(format!("{prefix}.b2"), vec![d], Init::Zeros)?,
    })
}

impl<T> Layout<T> {
    /// Calls `f(name, shape, init)` once per parameter.
    pub fn build(config: &ModelConfig, f: &mut Make<T>) -> Result<Self> {
        let d = config.d_model;
        let embed = f("embed".into(), vec![config.vocab_size, d], Init::Normal)?;
        let enc_pos = f("enc.pos".into(), vec![config.max_src_len, d], Init::Normal)?;
        let dec_pos = f("dec.pos".into(), vec![config.max_tgt_len, d], Init::Normal)?;
        let enc = (0..config.n_enc_layers)
            .map(|i| {
                Ok(EncLayer {
                    ln1: ln(f, &format!("enc.{i}.ln1"), d)?,
                    attn: attn(f, &format!("enc.{i}.attn"), d)?,
                    ln2: ln(f, &format!("enc.{i}.ln2"), d)?,
                    ffn: dense2(f, &format!("enc.{i}.ffn"), d, config.d_ff)?,
                })
            })
            .collect::<Result<_>>()?;
        let enc_ln = ln(f, "enc.ln_f", d)?;
        let dec = (0..config.n_dec_layers)
            .map(|i| {
                Ok(DecLayer {
                    ln1: ln(f, &format!("dec.{i}.ln1"), d)?,
                    self_attn: attn(f, &format!("dec.{i}.self_attn"), d)?,
                    ln2: ln(f, &format!("dec.{i}.ln2"), d)?,
                    cross_attn: attn(f, &format!("dec.{i}.cross_attn"), d)?,
                    ln3: ln(f, &format!("dec.{i}.ln3"), d)?,
                    ffn: dense2(f, &format!("dec.{i}.ffn"), d, config.d_ff)?,
                })
            })
            .collect::<Result<_>>()?;
        let dec_ln = ln(f, "dec.ln_f", d)?;
        let proj_enc = dense2(f, "proj_enc", d, config.proj_hidden)?;
        let proj_dec = dense2(f, "proj_dec", d, config.proj_hidden)?;
        Ok(Self { embed, enc_pos, dec_pos, enc, enc_ln, dec, dec_ln, proj_enc, proj_dec })
    }
}

/// Name and shape of every parameter, sorted by name.
pub fn param_specs(config: &ModelConfig) -> Result<BTreeMap<String, (Vec<usize>, Init)>> {
    let mut specs = BTreeMap::new();
    Layout::build(config, &mut |name, shape, init| {
        if specs.insert(name.clone(), (shape, init)).is_some() {
            return Err(ColoError::Config(format!("duplicate parameter name {name}")));
        }
        Ok(())
    })?;
    Ok(specs)
}

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<F> {
    tensors: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> ParameterSet<F> {
    pub fn from_map(tensors: BTreeMap<String, Tensor<F>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors.get(name).ok_or_else(|| ColoError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.tensors.get_mut(name).ok_or_else(|| ColoError::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<G: Real>(&self) -> ParameterSet<G> {
        ParameterSet { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Checks names and shapes against the architecture of `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let specs = param_specs(config)?;
        for (name, (shape, _)) in &specs {
            let t = self.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(ColoError::Dimension { op: "parameter", detail: format!("{name} has shape {:?}, expected {shape:?}", t.shape()) });
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !specs.contains_key(*k)) {
            return Err(ColoError::Config(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    /// Typed references for tape-free inference.
    pub fn layout(&self, config: &ModelConfig) -> Result<Layout<&Tensor<F>>> {
        self.check(config)?;
        Layout::build(config, &mut |name, _, _| self.get(&name))
    }
}

/// Normal(0, 0.02) weights, zero biases, unit layer-norm gains. Draws are
/// made in f64 in parameter-name order from one seeded stream.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParameterSet<f32>> {
    config.validate()?;
    let normal = Normal::new(0.0, INIT_STD).map_err(|e| ColoError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (name, (shape, init)) in param_specs(config)? {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Normal => (0..n).map(|_| normal.sample(&mut rng) as f32).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    Ok(ParameterSet { tensors })
}

/// Parameters recorded on one tape, typed and by name.
pub struct ModelVars {
    pub layout: Layout<Var>,
    /// `(name, var)` in name order.
    pub named: Vec<(String, Var)>,
}

impl ModelVars {
    /// Records every parameter as a trainable leaf, or as a constant when
    /// `trainable` is false.
    pub fn load<F: Real>(tape: &mut Tape<F>, params: &ParameterSet<F>, config: &ModelConfig, trainable: bool) -> Result<Self> {
        params.check(config)?;
        let mut named = Vec::with_capacity(params.len());
        let layout = Layout::build(config, &mut |name, _, _| {
            let t = params.get(&name)?;
            let v = if trainable { tape.param(t)? } else { tape.constant(t.clone())? };
            named.push((name, v));
            Ok(v)
        })?;
        named.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { layout, named })
    }

    /// Adds `scale * grad` of every parameter into `acc` (aligned with name
    /// order). Parameters off the gradient path contribute nothing.
    pub fn accumulate_grads<F: Real>(&self, tape: &Tape<F>, acc: &mut [Vec<F>], scale: F) {
        for ((_, v), a) in self.named.iter().zip(acc.iter_mut()) {
            if let Some(g) = tape.grad(*v) {
                for (x, &gi) in a.iter_mut().zip(g) {
                    *x = *x + scale * gi;
                }
            }
        }
    }
}

/// Token ids for teacher forcing: `tgt_in = BOS + reference`,
/// `tgt_out = reference + EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seq2SeqPair {
    pub src: Vec<usize>,
    pub tgt_in: Vec<usize>,
    pub tgt_out: Vec<usize>,
}

impl Seq2SeqPair {
    pub fn new(src: Vec<usize>, reference: &[usize], config: &ModelConfig) -> Result<Self> {
        if src.is_empty() || src.len() > config.max_src_len {
            return Err(ColoError::Length { what: "source", len: src.len(), max: config.max_src_len });
        }
        if reference.len() + 1 > config.max_tgt_len {
            return Err(ColoError::Length { what: "target", len: reference.len() + 1, max: config.max_tgt_len });
        }
        let mut tgt_in = Vec::with_capacity(reference.len() + 1);
        tgt_in.push(BOS);
        tgt_in.extend_from_slice(reference);
        let mut tgt_out = reference.to_vec();
        tgt_out.push(EOS);
        Ok(Self { src, tgt_in, tgt_out })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_sorted() {
        let specs = param_specs(&ModelConfig::default()).unwrap();
        assert!(specs.contains_key("enc.0.attn.wq"));
        assert!(specs.contains_key("dec.1.cross_attn.bo"));
        assert!(specs.contains_key("proj_dec.w2"));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ModelConfig { n_heads: 3, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { max_tgt_len: 1, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { dropout_rate: 1.0, ..ModelConfig::default() }.validate().is_err());
    }

    #[test]
    fn seq2seq_pair_shifts_targets() {
        let p = Seq2SeqPair::new(vec![4, 9], &[10, 11, 12], &ModelConfig::default()).unwrap();
        assert_eq!(p.tgt_in, vec![BOS, 10, 11, 12]);
        assert_eq!(p.tgt_out, vec![10, 11, 12, EOS]);
        let long = vec![10; 160];
        assert!(matches!(Seq2SeqPair::new(vec![4], &long, &ModelConfig::default()), Err(ColoError::Length { .. })));
    }
}
