use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::Args;
use colo_core::contrastive::NegKind;
use colo_core::corpus::{Split, Vocab};
use colo_core::model::ModelConfig;
use colo_core::trainer::{load_checkpoint, save_checkpoint, train_until, TrainConfig, TrainData, TrainState};
use serde::{Deserialize, Serialize};

use super::{required, resolve, LoadedCorpus, CHECKPOINT_FILE, LOG_FILE};
use crate::error::{CliError, Result};
use crate::manifest::{prepare_dir, run_dir, ManifestBuilder, RunManifest};

/// Optimizer and model options shared by `train` and `ablate`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ModelTrainOpts {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Cap on optimizer steps.
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Steps between quick validation checks (0 = never).
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub project_in_ce: bool,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub enc_layers: Option<usize>,
    #[arg(long)]
    pub dec_layers: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub proj_hidden: Option<usize>,
}

impl ModelTrainOpts {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let d = ModelConfig::default();
        ModelConfig {
            vocab_size,
            d_model: self.d_model.unwrap_or(d.d_model),
            n_heads: self.n_heads.unwrap_or(d.n_heads),
            n_enc_layers: self.enc_layers.unwrap_or(d.n_enc_layers),
            n_dec_layers: self.dec_layers.unwrap_or(d.n_dec_layers),
            d_ff: self.d_ff.unwrap_or(d.d_ff),
            dropout_rate: self.dropout.unwrap_or(d.dropout_rate),
            proj_hidden: self.proj_hidden.unwrap_or(d.proj_hidden),
            ..d
        }
    }

    /// Loss switches stay at their defaults; callers set them.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            gamma: self.gamma.unwrap_or(d.gamma),
            batch_size: self.batch.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed,
            project_in_ce: self.project_in_ce,
            grad_clip_norm: self.grad_clip.unwrap_or(d.grad_clip_norm),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            max_steps: self.max_steps.or(d.max_steps),
            ..d
        }
    }
}

pub fn parse_negatives(text: &str) -> Result<Vec<NegKind>> {
    text.split(',')
        .map(|s| match s.trim() {
            "es" => Ok(NegKind::Es),
            "as" => Ok(NegKind::As),
            "os" => Ok(NegKind::Os),
            other => Err(CliError::Config(format!("unknown negative type {other:?} (expected es, as or os)"))),
        })
        .collect()
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus directory (or its corpus.jsonl).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop the contrastive encoding term.
    #[arg(long)]
    pub no_ce: bool,
    /// Drop the contrastive decoding term.
    #[arg(long)]
    pub no_cd: bool,
    /// Comma-separated negative types, e.g. `es,os`.
    #[arg(long)]
    pub negatives: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: ModelTrainOpts,
    /// Stop (and checkpoint) after this many completed steps.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Continue from a checkpoint written with the same options.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

impl TrainArgs {
    pub fn configs(&self, vocab_size: usize) -> Result<(ModelConfig, TrainConfig)> {
        let mut tc = self.opts.train_config(self.seed.unwrap_or(0));
        tc.use_ce = !self.no_ce;
        tc.use_cd = !self.no_cd;
        if let Some(n) = &self.negatives {
            tc.negatives = parse_negatives(n)?;
        }
        let mc = self.opts.model_config(vocab_size);
        mc.validate()?;
        tc.validate()?;
        Ok((mc, tc))
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    options: &'a TrainArgs,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

pub struct TrainOutcome {
    pub dir: PathBuf,
    pub state: TrainState,
    pub manifest: RunManifest,
}

fn open_state(args: &TrainArgs, mc: ModelConfig, tc: TrainConfig) -> Result<TrainState> {
    let Some(path) = &args.resume else {
        return Ok(TrainState::new(mc, tc)?);
    };
    let state = load_checkpoint(path)?;
    if state.model_config != mc || state.train_config != tc {
        return Err(CliError::Config(format!("{} was written with different model or training options", path.display())));
    }
    Ok(state)
}

pub fn run(args: TrainArgs) -> Result<TrainOutcome> {
    let started = Utc::now();
    let args = resolve(args.clone(), args.config.as_deref())?;
    let corpus_path = required(&args.corpus, "corpus")?;
    let corpus = LoadedCorpus::load(&corpus_path)?;
    let vocab = Vocab::build(&corpus.lex);
    let (mc, tc) = args.configs(vocab.len())?;
    let dir = run_dir(args.out.as_deref(), tc.seed, started);
    prepare_dir(&dir, &[CHECKPOINT_FILE, LOG_FILE], args.force)?;

    let data = TrainData { lex: &corpus.lex, vocab: &vocab, train: corpus.split(Split::Train).0, valid: corpus.split(Split::Valid).0 };
    let mut state = open_state(&args, mc.clone(), tc.clone())?;
    let log_path = dir.join(LOG_FILE);
    train_logged(&mut state, &data, args.stop_after.unwrap_or(u64::MAX), &log_path)?;
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt_path, &state)?;

    let mut m = ManifestBuilder::new("train", &Resolved { options: &args, model: &mc, train: &tc }, tc.seed, started)?;
    m.input(corpus.corpus_path.clone());
    m.input(corpus.lexicon_path.clone());
    if let Some(r) = &args.resume {
        m.input(r.clone());
    }
    m.artifact(ckpt_path);
    m.artifact(log_path);
    let manifest = m.write(&dir)?;
    Ok(TrainOutcome { dir, state, manifest })
}

/// Trains to `until` steps, one JSON line per step in `log_path`.
pub fn train_logged(state: &mut TrainState, data: &TrainData, until: u64, log_path: &Path) -> Result<()> {
    let mut log = BufWriter::new(std::fs::File::create(log_path)?);
    let result = train_until(state, data, until, &mut |r| {
        serde_json::to_writer(&mut log, r)?;
        log.write_all(b"\n")?;
        Ok(())
    });
    log.flush()?;
    Ok(result?)
}
