//! Greedy and beam-search generation over any step-wise scorer.

use std::cmp::Ordering;

use crate::corpus::{BOS, EOS};
use crate::error::{ColoError, Result};
use crate::model::{DecoderCache, EncodedSource, Incremental};
use crate::tensor::Real;

/// Next-token log-probabilities given a prefix, with cloneable state.
pub trait StepScorer {
    type State: Clone;

    fn start(&self) -> Self::State;

    /// Feeds `token` and returns log-probabilities of the next token.
    fn step(&self, state: &mut Self::State, token: usize) -> Result<Vec<f64>>;

    /// Maximum number of generated tokens.
    fn max_len(&self) -> usize;
}

/// The transformer conditioned on one encoded source.
pub struct ModelScorer<'a, 'b, F> {
    inc: &'b Incremental<'a, F>,
    enc: EncodedSource<F>,
}

impl<'a, 'b, F: Real> ModelScorer<'a, 'b, F> {
    pub fn new(inc: &'b Incremental<'a, F>, src: &[usize]) -> Result<Self> {
        Ok(Self { enc: inc.encode(src)?, inc })
    }
}

/// Numerically stable `log softmax` in 64-bit.
pub fn log_softmax<F: Real>(logits: &[F]) -> Vec<f64> {
    let max = logits.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x.as_f64() - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x.as_f64() - lse).collect()
}

impl<F: Real> StepScorer for ModelScorer<'_, '_, F> {
    type State = DecoderCache<F>;

    fn start(&self) -> DecoderCache<F> {
        self.inc.start()
    }

    fn step(&self, state: &mut DecoderCache<F>, token: usize) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.inc.step(&self.enc, state, token)?))
    }

    fn max_len(&self) -> usize {
        self.inc.config().max_tgt_len
    }
}

/// A decoded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// BOS-prefixed token ids.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities.
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens after BOS.
    pub fn generated(&self) -> &[usize] {
        &self.tokens[1..]
    }

    /// `logprob / n^alpha` over the `n` generated tokens; `alpha = 0` gives
    /// the raw sum.
    pub fn normalized(&self, alpha: f64) -> f64 {
        let n = self.generated().len();
        if n == 0 || alpha == 0.0 {
            return self.logprob;
        }
        self.logprob / (n as f64).powf(alpha)
    }
}

/// Index of the largest value; ties go to the smallest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding until EOS or the length limit.
pub fn greedy_decode<S: StepScorer>(scorer: &S) -> Result<Hypothesis> {
    let mut state = scorer.start();
    let mut tokens = vec![BOS];
    let mut logprob = 0.0;
    let mut last = BOS;
    while tokens.len() <= scorer.max_len() {
        let lp = scorer.step(&mut state, last)?;
        last = argmax(&lp);
        logprob += lp[last];
        tokens.push(last);
        if last == EOS {
            break;
        }
    }
    Ok(Hypothesis { tokens, logprob, finished: true })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Exponent of the length normalization of final scores.
    pub length_alpha: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_size: 5, length_alpha: 1.0 }
    }
}

fn by_score_then_tokens(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search. Each round keeps the best `width` extensions by cumulative
/// log-probability; an extension ending in EOS (or reaching the length
/// limit) is retired to the finished pool and permanently takes one of the
/// `beam_size` slots. Finished hypotheses are ranked by normalized score,
/// ties by token ids.
pub fn beam_search<S: StepScorer>(scorer: &S, config: BeamConfig) -> Result<Vec<Hypothesis>> {
    if config.beam_size == 0 {
        return Err(ColoError::Config("beam size must be at least 1".into()));
    }
    struct Live<St> {
        tokens: Vec<usize>,
        logprob: f64,
        state: St,
    }
    let mut live = vec![Live { tokens: vec![BOS], logprob: 0.0, state: scorer.start() }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    let mut width = config.beam_size;
    while width > 0 && !live.is_empty() {
        let mut scored = Vec::with_capacity(live.len());
        for h in &mut live {
            let last = h.tokens[h.tokens.len() - 1];
            scored.push(scorer.step(&mut h.state, last)?);
        }
        let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * scored.first().map_or(0, Vec::len));
        for (bi, (h, lp)) in live.iter().zip(&scored).enumerate() {
            candidates.extend(lp.iter().enumerate().map(|(tok, &l)| (h.logprob + l, bi, tok)));
        }
        // Live prefixes share a length, so comparing (prefix, token) is lexicographic.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| live[a.1].tokens.cmp(&live[b.1].tokens)).then(a.2.cmp(&b.2)));
        candidates.truncate(width);
        let mut next = Vec::with_capacity(width);
        for (logprob, bi, tok) in candidates {
            let mut tokens = live[bi].tokens.clone();
            tokens.push(tok);
            let done = tok == EOS || tokens.len() > scorer.max_len();
            if done {
                pool.push(Hypothesis { tokens, logprob, finished: true });
                width -= 1;
            } else {
                next.push(Live { tokens, logprob, state: live[bi].state.clone() });
            }
        }
        live = next;
    }
    pool.sort_by(|a, b| by_score_then_tokens((a.normalized(config.length_alpha), &a.tokens), (b.normalized(config.length_alpha), &b.tokens)));
    pool.truncate(config.beam_size);
    Ok(pool)
}

/// Generated tokens of the best [`beam_search`] hypothesis, or of greedy
/// decoding for width 1.
pub fn generate<S: StepScorer>(scorer: &S, config: BeamConfig) -> Result<Vec<usize>> {
    let best = if config.beam_size == 1 {
        greedy_decode(scorer)?
    } else {
        beam_search(scorer, config)?.into_iter().next().ok_or_else(|| ColoError::Config("beam search produced nothing".into()))?
    };
    Ok(best.generated().to_vec())
}
