use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{hinge_margin_loss, margin_schedule, ContrastiveSet, MarginSchedule, NegKind};
use crate::corpus::{source_tokens, Example, Lexicon, SurfaceChoice, Vocab, PAD};
use crate::error::{ColoError, Result};
use crate::model::{decode, encode, lm_loss, project, relation_embedding, Incremental, ModelConfig, ModelVars, ParameterSet, RepSource, Seq2SeqPair};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Which loss terms are active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub use_ce: bool,
    pub use_cd: bool,
    /// Negative types used by both contrastive terms, ranked in this order.
    pub negatives: Vec<NegKind>,
    pub gamma: f64,
    /// Pass encoder-side vectors through the encoder projection in the
    /// encoding loss as well.
    pub project_in_ce: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { use_ce: true, use_cd: true, negatives: NegKind::ALL.to_vec(), gamma: 0.01, project_in_ce: false }
    }
}

impl LossConfig {
    pub fn lm_only() -> Self {
        Self { use_ce: false, use_cd: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ColoError::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if (self.use_ce || self.use_cd) && self.negatives.is_empty() {
            return Err(ColoError::Config("contrastive terms need at least one negative type".into()));
        }
        let mut seen = self.negatives.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.negatives.len() {
            return Err(ColoError::Config("negative types must be distinct".into()));
        }
        Ok(())
    }
}

/// Token ids of every sequence the objective needs for one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveInputs {
    pub pair: Seq2SeqPair,
    pub positive: Vec<usize>,
    pub negatives: Vec<(NegKind, Vec<usize>)>,
}

impl ContrastiveInputs {
    /// Sources use canonical surfaces except the positive. Profiles follow
    /// their entity, so the entity-swap negative also swaps the profiles.
    pub fn build(example: &Example, set: &ContrastiveSet, lex: &Lexicon, vocab: &Vocab, config: &ModelConfig) -> Result<Self> {
        let max = config.max_src_len;
        let src = |t, profiles, choice| -> Result<Vec<usize>> { Ok(vocab.tokenize(&source_tokens(t, profiles, lex, choice, max)?)) };
        let [pa, pb] = &example.profiles;
        let swapped = [pb.clone(), pa.clone()];
        let original = src(&set.original, &example.profiles, SurfaceChoice::default())?;
        let positive = src(&set.positive, &example.profiles, set.positive_surfaces)?;
        let negatives = vec![
            (NegKind::Es, src(&set.neg_es, &swapped, SurfaceChoice::default())?),
            (NegKind::As, src(&set.neg_as, &example.profiles, SurfaceChoice::default())?),
            (NegKind::Os, src(&set.neg_os, &example.profiles, SurfaceChoice::default())?),
        ];
        let pair = Seq2SeqPair::new(original, &vocab.tokenize(&example.reference), config)?;
        Ok(Self { pair, positive, negatives })
    }

    pub fn negative(&self, kind: NegKind) -> &[usize] {
        self.negatives.iter().find(|(k, _)| *k == kind).map(|(_, s)| s.as_slice()).unwrap_or_default()
    }
}

/// Forward passes run while computing one example's objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCount {
    pub encoder: usize,
    pub decoder: usize,
}

pub struct LossBreakdown {
    pub lm: Var,
    pub ce: Var,
    pub cd: Var,
    /// `lm + ce + cd`.
    pub total: Var,
    /// Present when a contrastive term is active.
    pub margins: Option<MarginSchedule>,
    pub passes: PassCount,
}

fn mask(ids: &[usize]) -> Vec<bool> {
    ids.iter().map(|&t| t != PAD).collect()
}

/// `lm + ce + cd` for one example. Margins come from teacher-forcing the
/// original reference from each negative on a separate gradient-free tape;
/// `params` must hold the values loaded into `vars`. `rng` drives dropout.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<F: Real>(
    tape: &mut Tape<F>,
    vars: &ModelVars,
    params: &ParameterSet<F>,
    model: &ModelConfig,
    inputs: &ContrastiveInputs,
    cfg: &LossConfig,
    rng: &mut dyn RngCore,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let layout = &vars.layout;
    let pair = &inputs.pair;
    let mut passes = PassCount { encoder: 1, decoder: 1 };
    let lm_pass = lm_loss(tape, layout, model, pair, Some(&mut *rng))?;
    let lm = lm_pass.loss;

    if !cfg.use_ce && !cfg.use_cd {
        let ce = tape.constant(Tensor::scalar(F::zero()))?;
        let cd = tape.constant(Tensor::scalar(F::zero()))?;
        let total = tape.add_all(&[lm, ce, cd])?;
        return Ok(LossBreakdown { lm, ce, cd, total, margins: None, passes });
    }

    let src_mask = mask(&pair.src);
    let z = relation_embedding(tape, lm_pass.enc_states, &src_mask, RepSource::Original)?.vector;

    let mut neg_states = Vec::with_capacity(cfg.negatives.len());
    for &kind in &cfg.negatives {
        let src = inputs.negative(kind);
        let m = mask(src);
        let states = encode(tape, layout, model, src, &m, Some(&mut *rng))?;
        passes.encoder += 1;
        let source = match kind {
            NegKind::Es => RepSource::NegEs,
            NegKind::As => RepSource::NegAs,
            NegKind::Os => RepSource::NegOs,
        };
        let zn = relation_embedding(tape, states, &m, source)?.vector;
        neg_states.push((kind, states, m, zn));
    }

    // Margin constants: LM loss of the reference given each negative,
    // reusing that negative's encoder states without a gradient path.
    let mut neg_tape = Tape::<F>::new();
    let frozen = ModelVars::load(&mut neg_tape, params, model, false)?;
    let tgt_mask = mask(&pair.tgt_out);
    let mut neg_losses = Vec::with_capacity(neg_states.len());
    for (kind, states, m, _) in &neg_states {
        let enc = neg_tape.constant(tape.tensor(*states))?;
        let out = decode(&mut neg_tape, &frozen.layout, model, enc, m, &pair.tgt_in, None)?;
        let loss = neg_tape.softmax_cross_entropy(out.logits, &pair.tgt_out, &tgt_mask)?;
        passes.decoder += 1;
        neg_losses.push((*kind, neg_tape.scalar(loss).as_f64()));
    }
    let schedule = margin_schedule(cfg.gamma, &neg_losses)?;
    let margin_of = |k: NegKind| schedule.margin(k).unwrap_or(0.0);

    let projected = if cfg.use_cd || cfg.project_in_ce {
        let pz = project(tape, &layout.proj_enc, z)?;
        let pn = neg_states.iter().map(|(k, _, _, zn)| Ok((*k, project(tape, &layout.proj_enc, *zn)?))).collect::<Result<Vec<_>>>()?;
        Some((pz, pn))
    } else {
        None
    };

    let ce = if cfg.use_ce {
        let m = mask(&inputs.positive);
        let pos_states = encode(tape, layout, model, &inputs.positive, &m, Some(&mut *rng))?;
        passes.encoder += 1;
        let zp = relation_embedding(tape, pos_states, &m, RepSource::Positive)?.vector;
        let (anchor, other, negs): (Var, Var, Vec<(NegKind, Var)>) = match (&projected, cfg.project_in_ce) {
            (Some((pz, pn)), true) => (*pz, project(tape, &layout.proj_enc, zp)?, pn.clone()),
            _ => (z, zp, neg_states.iter().map(|(k, _, _, zn)| (*k, *zn)).collect()),
        };
        let p_plus = [tape.cosine_similarity(anchor, other)?];
        let p_minus = negs.iter().map(|&(k, zn)| Ok((tape.cosine_similarity(anchor, zn)?, margin_of(k)))).collect::<Result<Vec<_>>>()?;
        hinge_margin_loss(tape, &p_plus, &p_minus)?
    } else {
        tape.constant(Tensor::scalar(F::zero()))?
    };

    let cd = match (&projected, cfg.use_cd) {
        (Some((pz, pn)), true) => {
            let zy = relation_embedding(tape, lm_pass.decoder.states, &mask(&pair.tgt_in), RepSource::DecoderOutput)?.vector;
            let u = project(tape, &layout.proj_dec, zy)?;
            let p_plus = [tape.cosine_similarity(u, *pz)?];
            let p_minus = pn.iter().map(|&(k, v)| Ok((tape.cosine_similarity(u, v)?, margin_of(k)))).collect::<Result<Vec<_>>>()?;
            hinge_margin_loss(tape, &p_plus, &p_minus)?
        }
        _ => tape.constant(Tensor::scalar(F::zero()))?,
    };

    let total = tape.add_all(&[lm, ce, cd])?;
    Ok(LossBreakdown { lm, ce, cd, total, margins: Some(schedule), passes })
}

/// Cosine between the pooled encoder states of two sources, no dropout.
pub fn encoder_similarity<F: Real>(inc: &Incremental<F>, a: &[usize], b: &[usize]) -> Result<f64> {
    let d = inc.config().d_model;
    let pooled = |src: &[usize]| -> Result<Vec<f64>> {
        let enc = inc.encode(src)?;
        let mut out = vec![0.0; d];
        for row in enc.states.chunks(d) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x.as_f64());
        }
        Ok(out.into_iter().map(|x| x / enc.len as f64).collect())
    };
    let (u, v) = (pooled(a)?, pooled(b)?);
    let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(ColoError::DegenerateVector);
    }
    Ok(dot / (nu * nv).max(crate::tensor::COSINE_EPS))
}
