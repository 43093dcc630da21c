use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::Args;
use colo_core::corpus::{read_lexicon, Category, ClrTuple, EntityProfile, Example, Lexicon, Split, Vocab};
use colo_core::decoder::{generate, BeamConfig, ModelScorer};
use colo_core::eval::{source_ids, Prediction};
use colo_core::model::Incremental;
use colo_core::trainer::load_checkpoint;
use serde::{Deserialize, Serialize};

use super::{corpus_paths, required, resolve, write_jsonl, PREDICTIONS_FILE};
use crate::error::{CliError, Result};
use crate::manifest::{prepare_dir, run_dir, ManifestBuilder, RunManifest};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Corpus directory whose lexicon the checkpoint was trained with.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// JSONL of `{"tuple": .., "profiles": ..}` lines; corpus files work too.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Beam width (default 5; 1 is greedy).
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub length_alpha: Option<f64>,
    #[arg(long)]
    pub force: bool,
}

pub fn beam_config(beam: Option<usize>, alpha: Option<f64>) -> Result<BeamConfig> {
    let d = BeamConfig::default();
    let b = BeamConfig { beam_size: beam.unwrap_or(d.beam_size), length_alpha: alpha.unwrap_or(d.length_alpha) };
    if b.beam_size == 0 {
        return Err(CliError::Config("beam must be at least 1".into()));
    }
    Ok(b)
}

#[derive(Deserialize)]
struct InputRecord {
    #[serde(default)]
    example_id: Option<usize>,
    tuple: ClrTuple,
    profiles: [BTreeMap<Category, Vec<String>>; 2],
}

/// Input tuples with their ids (explicit, or the line index).
pub fn read_inputs(path: &Path, lex: &Lexicon) -> Result<Vec<(usize, Example)>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Data(format!("{}:{}: {m}", path.display(), i + 1));
        let r: InputRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        lex.check_tuple(&r.tuple).map_err(|e| bad(e.to_string()))?;
        let [pa, pb] = r.profiles;
        let profiles = [EntityProfile { entity: r.tuple.entity_a.clone(), attributes: pa }, EntityProfile { entity: r.tuple.entity_b.clone(), attributes: pb }];
        let example = Example { tuple: r.tuple, profiles, reference: Vec::new(), split: Split::Test };
        out.push((r.example_id.unwrap_or(i), example));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Resolved<'a> {
    options: &'a GenerateArgs,
    beam: BeamConfig,
}

pub fn run(args: GenerateArgs) -> Result<(PathBuf, RunManifest)> {
    let started = Utc::now();
    let args = resolve(args.clone(), args.config.as_deref())?;
    let ckpt = required(&args.ckpt, "ckpt")?;
    let input = required(&args.input, "input")?;
    let (_, lexicon_path) = corpus_paths(&required(&args.corpus, "corpus")?);
    let beam = beam_config(args.beam, args.length_alpha)?;

    let state = load_checkpoint(&ckpt)?;
    let lex = read_lexicon(&lexicon_path)?;
    let vocab = Vocab::build(&lex);
    if vocab.len() != state.model_config.vocab_size {
        return Err(CliError::Data(format!("lexicon gives {} tokens but the checkpoint expects {}", vocab.len(), state.model_config.vocab_size)));
    }
    let dir = run_dir(args.out.as_deref(), state.train_config.seed, started);
    prepare_dir(&dir, &[PREDICTIONS_FILE], args.force)?;

    let inputs = read_inputs(&input, &lex)?;
    let inc = Incremental::new(&state.params, &state.model_config)?;
    let predictions = inputs
        .iter()
        .map(|(id, e)| {
            let src = source_ids(e, &lex, &vocab, state.model_config.max_src_len)?;
            let scorer = ModelScorer::new(&inc, &src)?;
            Ok(Prediction { example_id: *id, prediction: vocab.detokenize_output(&generate(&scorer, beam)?) })
        })
        .collect::<Result<Vec<_>>>()?;
    let pred_path = dir.join(PREDICTIONS_FILE);
    write_jsonl(&pred_path, &predictions)?;

    let mut m = ManifestBuilder::new("generate", &Resolved { options: &args, beam }, state.train_config.seed, started)?;
    m.input(ckpt);
    m.input(lexicon_path);
    m.input(input);
    m.artifact(pred_path);
    let manifest = m.write(&dir)?;
    Ok((dir, manifest))
}
