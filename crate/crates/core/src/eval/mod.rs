//! Automatic evaluation of generated descriptions.

mod metrics;
mod oracle;

use serde::{Deserialize, Serialize};

pub use metrics::{bleu, distinct_n, lcs_len, modified_precision_counts, rouge_l, rouge_l_pair};
pub use oracle::{coverage, entail_oracle, Extraction, SurfaceIndex};

use crate::corpus::{source_tokens, Example, Lexicon, SurfaceChoice, Vocab};
use crate::decoder::{generate, log_softmax, BeamConfig, ModelScorer};
use crate::error::{ColoError, Result};
use crate::model::{Incremental, ModelConfig, ParameterSet, Seq2SeqPair};
use crate::tensor::Real;

/// How the entailment column is judged.
pub const ENTAIL_JUDGE: &str = "exact grammar oracle (replaces a learned NLI judge)";
/// How the perplexity column is computed.
pub const PPL_SOURCE: &str = "exp of the evaluated model's own token-mean NLL on the references";
/// How coverage matches components.
pub const COVER_MATCH: &str = "any alias as a contiguous token run";

/// Corpus-level scores, each in `[0, 1]` except `ppl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub b1: f64,
    pub b4: f64,
    pub r_l: f64,
    pub dist4: f64,
    pub cover: f64,
    pub entail: f64,
    pub ppl: Option<f64>,
    pub n_examples: usize,
    pub entail_judge: String,
    pub ppl_source: String,
    pub cover_match: String,
}

impl EvalReport {
    /// Row of percentages in column order B-1, B-4, R-L, Dist-4, Cover, Entail.
    pub fn percentages(&self) -> [f64; 6] {
        [self.b1, self.b4, self.r_l, self.dist4, self.cover, self.entail].map(|x| 100.0 * x)
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: usize,
    pub prediction: Vec<String>,
}

/// Canonical-surface source ids of an example.
pub fn source_ids(example: &Example, lex: &Lexicon, vocab: &Vocab, max_src_len: usize) -> Result<Vec<usize>> {
    Ok(vocab.tokenize(&source_tokens(&example.tuple, &example.profiles, lex, SurfaceChoice::default(), max_src_len)?))
}

/// Teacher-forcing pair of an example.
pub fn example_pair(example: &Example, lex: &Lexicon, vocab: &Vocab, config: &ModelConfig) -> Result<Seq2SeqPair> {
    Seq2SeqPair::new(source_ids(example, lex, vocab, config.max_src_len)?, &vocab.tokenize(&example.reference), config)
}

/// Scores predictions against the examples' references and tuples.
pub fn evaluate_predictions<S: AsRef<str>>(lex: &Lexicon, examples: &[&Example], predictions: &[Vec<S>]) -> Result<EvalReport> {
    if examples.len() != predictions.len() {
        return Err(ColoError::Alignment { candidates: predictions.len(), references: examples.len() });
    }
    let cands: Vec<Vec<&str>> = predictions.iter().map(|p| p.iter().map(AsRef::as_ref).collect()).collect();
    let refs: Vec<Vec<&str>> = examples.iter().map(|e| e.reference.iter().map(String::as_str).collect()).collect();
    let index = SurfaceIndex::new(lex);
    let n = examples.len().max(1) as f64;
    let cover = cands.iter().zip(examples).map(|(c, e)| index.coverage(c, &e.tuple, lex)).sum::<f64>() / n;
    let entail = cands.iter().zip(examples).map(|(c, e)| f64::from(index.entail(c, &e.tuple))).sum::<f64>() / n;
    Ok(EvalReport {
        b1: bleu(&cands, &refs, 1)?,
        b4: bleu(&cands, &refs, 4)?,
        r_l: rouge_l(&cands, &refs)?,
        dist4: distinct_n(&cands, 4)?,
        cover,
        entail,
        ppl: None,
        n_examples: examples.len(),
        entail_judge: ENTAIL_JUDGE.into(),
        ppl_source: PPL_SOURCE.into(),
        cover_match: COVER_MATCH.into(),
    })
}

/// `exp` of the token-mean teacher-forced NLL of the references.
pub fn perplexity<F: Real>(params: &ParameterSet<F>, config: &ModelConfig, pairs: &[Seq2SeqPair]) -> Result<f64> {
    let inc = Incremental::new(params, config)?;
    let (mut nll, mut count) = (0.0, 0usize);
    for pair in pairs {
        let enc = inc.encode(&pair.src)?;
        let mut cache = inc.start();
        for (&input, &target) in pair.tgt_in.iter().zip(&pair.tgt_out) {
            nll -= log_softmax(&inc.step(&enc, &mut cache, input)?)[target];
            count += 1;
        }
    }
    if count == 0 {
        return Err(ColoError::Config("perplexity needs at least one target token".into()));
    }
    Ok((nll / count as f64).exp())
}

/// Generated output tokens (special tokens removed) for each example.
pub fn decode_examples<F: Real>(
    params: &ParameterSet<F>,
    config: &ModelConfig,
    lex: &Lexicon,
    vocab: &Vocab,
    examples: &[&Example],
    beam: BeamConfig,
) -> Result<Vec<Vec<String>>> {
    let inc = Incremental::new(params, config)?;
    examples
        .iter()
        .map(|e| {
            let src = source_ids(e, lex, vocab, config.max_src_len)?;
            let scorer = ModelScorer::new(&inc, &src)?;
            Ok(vocab.detokenize_output(&generate(&scorer, beam)?))
        })
        .collect()
}

/// Decodes every example and reports all metrics, including perplexity.
/// `ids` gives the id recorded with each prediction.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_corpus<F: Real>(
    params: &ParameterSet<F>,
    config: &ModelConfig,
    lex: &Lexicon,
    vocab: &Vocab,
    examples: &[&Example],
    ids: &[usize],
    beam: BeamConfig,
) -> Result<(EvalReport, Vec<Prediction>)> {
    if ids.len() != examples.len() {
        return Err(ColoError::Alignment { candidates: ids.len(), references: examples.len() });
    }
    let outputs = decode_examples(params, config, lex, vocab, examples, beam)?;
    let mut report = evaluate_predictions(lex, examples, &outputs)?;
    let pairs = examples.iter().map(|e| example_pair(e, lex, vocab, config)).collect::<Result<Vec<_>>>()?;
    report.ppl = Some(perplexity(params, config, &pairs)?);
    let predictions = ids.iter().zip(outputs).map(|(&example_id, prediction)| Prediction { example_id, prediction }).collect();
    Ok((report, predictions))
}
