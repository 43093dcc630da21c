use rand::RngCore;

use super::{Attn, Dense2, Layout, ModelConfig, Seq2SeqPair};
use crate::corpus::PAD;
use crate::error::{ColoError, Result};
use crate::tensor::{AttnMask, Real, Tape, Var};

/// Source of a pooled representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RepSource {
    Original,
    Positive,
    NegEs,
    NegAs,
    NegOs,
    DecoderOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationEmbedding {
    pub vector: Var,
    pub source: RepSource,
}

pub struct DecoderOutput {
    /// Final-norm decoder states `[T, d]`.
    pub states: Var,
    /// `[T, V]`.
    pub logits: Var,
}

fn linear<F: Real>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

#[allow(clippy::too_many_arguments)]
fn attention_block<F: Real>(
    tape: &mut Tape<F>,
    a: &Attn<Var>,
    xq: Var,
    xkv: Var,
    heads: usize,
    mask: &AttnMask,
    rate: f64,
    rng: Option<&mut (dyn RngCore + '_)>,
) -> Result<Var> {
    let q = linear(tape, xq, a.wq, a.bq)?;
    let k = linear(tape, xkv, a.wk, a.bk)?;
    let v = linear(tape, xkv, a.wv, a.bv)?;
    let att = tape.attention(q, k, v, heads, mask, rng.map(|r| (rate, r)))?;
    linear(tape, att, a.wo, a.bo)
}

fn feed_forward<F: Real>(tape: &mut Tape<F>, f: &Dense2<Var>, x: Var, rate: f64, rng: Option<&mut (dyn RngCore + '_)>) -> Result<Var> {
    let h = linear(tape, x, f.w1, f.b1)?;
    let h = tape.gelu(h)?;
    let o = linear(tape, h, f.w2, f.b2)?;
    match rng {
        Some(r) => tape.dropout(o, rate, r),
        None => Ok(o),
    }
}

fn embed_with_positions<F: Real>(tape: &mut Tape<F>, embed: Var, pos: Var, ids: &[usize]) -> Result<Var> {
    let tok = tape.embedding(embed, ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let p = tape.embedding(pos, &positions)?;
    tape.add(tok, p)
}

/// Contextual source states `[T, d]`. `rng` enables dropout.
pub fn encode<F: Real>(
    tape: &mut Tape<F>,
    vars: &Layout<Var>,
    config: &ModelConfig,
    src: &[usize],
    src_mask: &[bool],
    mut rng: Option<&mut (dyn RngCore + '_)>,
) -> Result<Var> {
    if src.len() > config.max_src_len {
        return Err(ColoError::Length { what: "source", len: src.len(), max: config.max_src_len });
    }
    if src_mask.len() != src.len() {
        return Err(ColoError::Dimension { op: "encode", detail: format!("mask length {} for {} tokens", src_mask.len(), src.len()) });
    }
    let mask = AttnMask::padding(src_mask.to_vec());
    let rate = config.dropout_rate;
    let mut x = embed_with_positions(tape, vars.embed, vars.enc_pos, src)?;
    for layer in &vars.enc {
        let h = tape.layer_norm(x, layer.ln1.g, layer.ln1.b)?;
        let a = attention_block(tape, &layer.attn, h, h, config.n_heads, &mask, rate, rng.as_deref_mut())?;
        x = tape.add(x, a)?;
        let h = tape.layer_norm(x, layer.ln2.g, layer.ln2.b)?;
        let f = feed_forward(tape, &layer.ffn, h, rate, rng.as_deref_mut())?;
        x = tape.add(x, f)?;
    }
    tape.layer_norm(x, vars.enc_ln.g, vars.enc_ln.b)
}

/// Causal decoder over `tgt_in` attending to `enc_states`. PAD entries of
/// `tgt_in` are hidden from self-attention.
pub fn decode<F: Real>(
    tape: &mut Tape<F>,
    vars: &Layout<Var>,
    config: &ModelConfig,
    enc_states: Var,
    enc_mask: &[bool],
    tgt_in: &[usize],
    mut rng: Option<&mut (dyn RngCore + '_)>,
) -> Result<DecoderOutput> {
    if tgt_in.len() > config.max_tgt_len {
        return Err(ColoError::Length { what: "target", len: tgt_in.len(), max: config.max_tgt_len });
    }
    let self_mask = AttnMask::causal(tgt_in.iter().map(|&t| t != PAD).collect());
    let cross_mask = AttnMask::padding(enc_mask.to_vec());
    let rate = config.dropout_rate;
    let mut x = embed_with_positions(tape, vars.embed, vars.dec_pos, tgt_in)?;
    for layer in &vars.dec {
        let h = tape.layer_norm(x, layer.ln1.g, layer.ln1.b)?;
        let a = attention_block(tape, &layer.self_attn, h, h, config.n_heads, &self_mask, rate, rng.as_deref_mut())?;
        x = tape.add(x, a)?;
        let h = tape.layer_norm(x, layer.ln2.g, layer.ln2.b)?;
        let c = attention_block(tape, &layer.cross_attn, h, enc_states, config.n_heads, &cross_mask, rate, rng.as_deref_mut())?;
        x = tape.add(x, c)?;
        let h = tape.layer_norm(x, layer.ln3.g, layer.ln3.b)?;
        let f = feed_forward(tape, &layer.ffn, h, rate, rng.as_deref_mut())?;
        x = tape.add(x, f)?;
    }
    let states = tape.layer_norm(x, vars.dec_ln.g, vars.dec_ln.b)?;
    let logits = tape.matmul_t(states, false, vars.embed, true)?;
    Ok(DecoderOutput { states, logits })
}

/// Masked mean of `states` rows.
pub fn relation_embedding<F: Real>(tape: &mut Tape<F>, states: Var, mask: &[bool], source: RepSource) -> Result<RelationEmbedding> {
    Ok(RelationEmbedding { vector: tape.masked_mean_pool(states, mask)?, source })
}

/// `tanh(e W1 + b1) W2 + b2` for a length-`d` vector.
pub fn project<F: Real>(tape: &mut Tape<F>, net: &Dense2<Var>, e: Var) -> Result<Var> {
    let d = tape.value(e).len();
    let x = tape.reshape(e, &[1, d])?;
    let h = linear(tape, x, net.w1, net.b1)?;
    let h = tape.tanh(h)?;
    let y = linear(tape, h, net.w2, net.b2)?;
    tape.reshape(y, &[d])
}

/// Result of a teacher-forced pass.
pub struct LmPass {
    /// Mean next-token loss over non-PAD target positions.
    pub loss: Var,
    pub enc_states: Var,
    pub decoder: DecoderOutput,
}

/// Teacher-forced next-token loss, mean over non-PAD target positions.
pub fn lm_loss<F: Real>(
    tape: &mut Tape<F>,
    vars: &Layout<Var>,
    config: &ModelConfig,
    pair: &Seq2SeqPair,
    mut rng: Option<&mut (dyn RngCore + '_)>,
) -> Result<LmPass> {
    let src_mask: Vec<bool> = pair.src.iter().map(|&t| t != PAD).collect();
    let enc = encode(tape, vars, config, &pair.src, &src_mask, rng.as_deref_mut())?;
    let out = decode(tape, vars, config, enc, &src_mask, &pair.tgt_in, rng)?;
    let tgt_mask: Vec<bool> = pair.tgt_out.iter().map(|&t| t != PAD).collect();
    let loss = tape.softmax_cross_entropy(out.logits, &pair.tgt_out, &tgt_mask)?;
    Ok(LmPass { loss, enc_states: enc, decoder: out })
}
