//! Mini-batch training with Adam, ablation switches and resumable state.

mod adam;
mod checkpoint;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_update, clip_global_norm, global_norm, AdamState, ADAM_EPS, BETA1, BETA2};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION, MAGIC};

use crate::contrastive::{build_contrastive_set, total_loss, ContrastiveInputs, LossConfig, NegKind};
use crate::corpus::{Example, Lexicon, Vocab};
use crate::decoder::BeamConfig;
use crate::error::{ColoError, Result};
use crate::eval::{decode_examples, evaluate_predictions, example_pair, perplexity};
use crate::model::{init_params, ModelConfig, ModelVars, ParameterSet};
use crate::rng::derive_seed;
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub use_ce: bool,
    pub use_cd: bool,
    /// Negative types fed to the contrastive terms.
    pub negatives: Vec<NegKind>,
    pub project_in_ce: bool,
    pub grad_clip_norm: f64,
    /// Steps between quick validation checks; 0 disables them.
    pub eval_every: usize,
    /// Validation examples used by the quick check.
    pub eval_sample: usize,
    /// Optional cap on the number of optimizer steps.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            gamma: 0.01,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            use_ce: true,
            use_cd: true,
            negatives: NegKind::ALL.to_vec(),
            project_in_ce: false,
            grad_clip_norm: 1.0,
            eval_every: 0,
            eval_sample: 32,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ColoError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return Err(ColoError::Config(format!("grad_clip_norm must be positive, got {}", self.grad_clip_norm)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ColoError::Config("batch_size and epochs must be at least 1".into()));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { use_ce: self.use_ce, use_cd: self.use_cd, negatives: self.negatives.clone(), gamma: self.gamma, project_in_ce: self.project_in_ce }
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> u64 {
        n_train.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n_train: usize) -> u64 {
        let full = self.steps_per_epoch(n_train) * self.epochs as u64;
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub params: ParameterSet<f32>,
    pub adam: AdamState,
    /// Completed optimizer steps.
    pub step: u64,
    /// Draws one seed per step.
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model_config: ModelConfig, train_config: TrainConfig) -> Result<Self> {
        model_config.validate()?;
        train_config.validate()?;
        let params = init_params(&model_config, train_config.seed)?;
        let adam = AdamState::new(&params);
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(train_config.seed, u64::MAX));
        Ok(Self { model_config, train_config, params, adam, step: 0, rng })
    }
}

/// Corpus pieces used during training.
pub struct TrainData<'a> {
    pub lex: &'a Lexicon,
    pub vocab: &'a Vocab,
    pub train: Vec<&'a Example>,
    pub valid: Vec<&'a Example>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Token-mean NLL of the validation sample.
    pub valid_lm: f64,
    pub cover: f64,
    pub entail: f64,
    pub n: usize,
}

/// One line of the metric log; losses are batch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lm: f64,
    pub ce: f64,
    pub cd: f64,
    pub total: f64,
    /// Before clipping.
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval: Option<EvalRecord>,
}

/// Training example positions for `epoch`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch)));
    order
}

fn numeric(step: u64) -> impl Fn(ColoError) -> ColoError {
    move |e| match e {
        ColoError::NonFinite { op } => ColoError::NumericAbort { step, detail: format!("non-finite value in {op}") },
        other => other,
    }
}

/// Quick check on the first `eval_sample` validation examples with greedy
/// decoding.
pub fn quick_eval(params: &ParameterSet<f32>, model: &ModelConfig, data: &TrainData, sample: usize) -> Result<EvalRecord> {
    let examples: Vec<&Example> = data.valid.iter().take(sample).copied().collect();
    let pairs = examples.iter().map(|e| example_pair(e, data.lex, data.vocab, model)).collect::<Result<Vec<_>>>()?;
    let valid_lm = perplexity(params, model, &pairs)?.ln();
    let outputs = decode_examples(params, model, data.lex, data.vocab, &examples, BeamConfig { beam_size: 1, length_alpha: 1.0 })?;
    let report = evaluate_predictions(data.lex, &examples, &outputs)?;
    Ok(EvalRecord { valid_lm, cover: report.cover, entail: report.entail, n: examples.len() })
}

/// Runs one optimizer step on the batch scheduled for `state.step`.
pub fn train_step(state: &mut TrainState, data: &TrainData) -> Result<StepRecord> {
    let cfg = &state.train_config;
    let model = &state.model_config;
    let loss_cfg = cfg.loss_config();
    let step = state.step;
    let spe = cfg.steps_per_epoch(data.train.len());
    let (epoch, in_epoch) = (step / spe, (step % spe) as usize);
    let order = epoch_order(cfg.seed, epoch, data.train.len());
    let batch = &order[in_epoch * cfg.batch_size..((in_epoch + 1) * cfg.batch_size).min(order.len())];
    let step_seed = state.rng.next_u64();
    let scale = 1.0 / batch.len() as f32;

    let mut grads: Vec<Vec<f32>> = state.params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    let (mut lm, mut ce, mut cd, mut total) = (0.0, 0.0, 0.0, 0.0);
    let mut tape = Tape::<f32>::new();
    for (i, &idx) in batch.iter().enumerate() {
        let example = data.train[idx];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(step_seed, i as u64));
        let set = build_contrastive_set(&example.tuple, data.lex, &mut rng)?;
        let inputs = ContrastiveInputs::build(example, &set, data.lex, data.vocab, model)?;
        tape.reset();
        let vars = ModelVars::load(&mut tape, &state.params, model, true).map_err(numeric(step))?;
        let out = total_loss(&mut tape, &vars, &state.params, model, &inputs, &loss_cfg, &mut rng).map_err(numeric(step))?;
        let t = f64::from(tape.scalar(out.total));
        if !t.is_finite() {
            return Err(ColoError::NumericAbort { step, detail: format!("loss is {t} on example {idx}") });
        }
        lm += f64::from(tape.scalar(out.lm));
        ce += f64::from(tape.scalar(out.ce));
        cd += f64::from(tape.scalar(out.cd));
        total += t;
        tape.backward(out.total).map_err(numeric(step))?;
        vars.accumulate_grads(&tape, &mut grads, scale);
    }
    let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip_norm);
    if !grad_norm.is_finite() {
        return Err(ColoError::NumericAbort { step, detail: format!("gradient norm is {grad_norm}") });
    }
    adam_update(&mut state.params, &grads, &mut state.adam, cfg.learning_rate)?;
    state.step += 1;
    let n = batch.len() as f64;
    let eval = if cfg.eval_every > 0 && state.step.is_multiple_of(cfg.eval_every as u64) {
        Some(quick_eval(&state.params, model, data, cfg.eval_sample)?)
    } else {
        None
    };
    Ok(StepRecord { step, epoch, lm: lm / n, ce: ce / n, cd: cd / n, total: total / n, grad_norm, eval })
}

/// Trains until `until` completed steps (capped by the configured total),
/// handing every record to `on_record`.
pub fn train_until(state: &mut TrainState, data: &TrainData, until: u64, on_record: &mut dyn FnMut(&StepRecord) -> Result<()>) -> Result<()> {
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(ColoError::Config("training needs non-empty train and valid splits".into()));
    }
    let end = until.min(state.train_config.total_steps(data.train.len()));
    while state.step < end {
        let record = train_step(state, data)?;
        on_record(&record)?;
    }
    Ok(())
}

/// Fresh training run to the configured budget.
pub fn train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    data: &TrainData,
    on_record: &mut dyn FnMut(&StepRecord) -> Result<()>,
) -> Result<TrainState> {
    let mut state = TrainState::new(model_config, train_config)?;
    train_until(&mut state, data, u64::MAX, on_record)?;
    Ok(state)
}
