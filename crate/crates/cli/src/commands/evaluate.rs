use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::Args;
use colo_core::corpus::{Split, Vocab};
use colo_core::eval::{evaluate_corpus, evaluate_predictions, EvalReport, Prediction};
use colo_core::trainer::load_checkpoint;
use serde::{Deserialize, Serialize};

use super::generate::beam_config;
use super::{required, resolve, write_json, write_jsonl, LoadedCorpus, PREDICTIONS_FILE, REPORT_FILE};
use crate::error::{CliError, Result};
use crate::manifest::{prepare_dir, run_dir, ManifestBuilder, RunManifest};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Decode the split with this checkpoint.
    #[arg(long, conflicts_with = "predictions")]
    pub ckpt: Option<PathBuf>,
    /// Score an existing predictions file instead.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// train, valid or test (default test).
    #[arg(long)]
    pub split: Option<String>,
    /// Only the first N examples of the split.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub length_alpha: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

/// Predictions in split order; every split id must appear exactly once.
pub fn align_predictions(path: &Path, ids: &[usize]) -> Result<Vec<Vec<String>>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut by_id = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if by_id.insert(p.example_id, p.prediction).is_some() {
            return Err(CliError::Data(format!("example id {} is predicted twice", p.example_id)));
        }
    }
    let out = ids.iter().map(|id| by_id.remove(id).ok_or_else(|| CliError::Data(format!("no prediction for example id {id}")))).collect::<Result<Vec<_>>>()?;
    if let Some(extra) = by_id.keys().next() {
        return Err(CliError::Data(format!("prediction for example id {extra} is not in the evaluated split")));
    }
    Ok(out)
}

pub fn run(args: EvaluateArgs) -> Result<(PathBuf, EvalReport, RunManifest)> {
    let started = Utc::now();
    let args = resolve(args.clone(), args.config.as_deref())?;
    let corpus = LoadedCorpus::load(&required(&args.corpus, "corpus")?)?;
    let split: Split = args.split.as_deref().unwrap_or("test").parse()?;
    let (mut examples, mut ids) = corpus.split(split);
    if let Some(n) = args.limit {
        examples.truncate(n);
        ids.truncate(n);
    }

    let mut m;
    let (dir, report, written) = match (&args.ckpt, &args.predictions) {
        (Some(ckpt), None) => {
            let state = load_checkpoint(ckpt)?;
            let vocab = Vocab::build(&corpus.lex);
            if vocab.len() != state.model_config.vocab_size {
                return Err(CliError::Data(format!("corpus gives {} tokens but the checkpoint expects {}", vocab.len(), state.model_config.vocab_size)));
            }
            let beam = beam_config(args.beam, args.length_alpha)?;
            let dir = run_dir(args.out.as_deref(), state.train_config.seed, started);
            prepare_dir(&dir, &[REPORT_FILE, PREDICTIONS_FILE], args.force)?;
            let (report, predictions) = evaluate_corpus(&state.params, &state.model_config, &corpus.lex, &vocab, &examples, &ids, beam)?;
            let pred_path = dir.join(PREDICTIONS_FILE);
            write_jsonl(&pred_path, &predictions)?;
            m = ManifestBuilder::new("evaluate", &(&args, beam), state.train_config.seed, started)?;
            m.input(ckpt.clone());
            (dir, report, vec![pred_path])
        }
        (None, Some(preds)) => {
            let outputs = align_predictions(preds, &ids)?;
            let report = evaluate_predictions(&corpus.lex, &examples, &outputs)?;
            let dir = run_dir(args.out.as_deref(), 0, started);
            prepare_dir(&dir, &[REPORT_FILE], args.force)?;
            m = ManifestBuilder::new("evaluate", &args, 0, started)?;
            m.input(preds.clone());
            (dir, report, Vec::new())
        }
        _ => return Err(CliError::Config("give exactly one of --ckpt and --predictions".into())),
    };
    let report_path = dir.join(REPORT_FILE);
    write_json(&report_path, &report)?;
    m.input(corpus.corpus_path.clone());
    m.input(corpus.lexicon_path.clone());
    for p in written {
        m.artifact(p);
    }
    m.artifact(report_path);
    let manifest = m.write(&dir)?;
    Ok((dir, report, manifest))
}
