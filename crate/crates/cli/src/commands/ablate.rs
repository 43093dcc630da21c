use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::Utc;
use clap::Args;
use colo_core::contrastive::{encoder_similarity, swap_entities, NegKind};
use colo_core::corpus::{source_tokens, Example, Lexicon, Split, SurfaceChoice, Vocab};
use colo_core::decoder::BeamConfig;
use colo_core::eval::{evaluate_corpus, source_ids, EvalReport};
use colo_core::model::{Incremental, ModelConfig, ParameterSet};
use colo_core::trainer::{save_checkpoint, TrainConfig, TrainData, TrainState};
use serde::{Deserialize, Serialize};

use super::generate::beam_config;
use super::train::{train_logged, ModelTrainOpts};
use super::{required, resolve, write_json, write_jsonl, LoadedCorpus, CHECKPOINT_FILE, LOG_FILE, PREDICTIONS_FILE, REPORT_FILE};
use crate::error::{CliError, Result};
use crate::manifest::{prepare_dir, run_dir, ManifestBuilder, RunManifest};

pub const RESULTS_FILE: &str = "results.json";
pub const TABLE_FILE: &str = "table.md";
pub const ARM_CONFIG_FILE: &str = "train_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Full,
    NoCe,
    NoCd,
    NoBoth,
    EsOnly,
    AsOnly,
    OsOnly,
}

impl Arm {
    pub const ALL: [Arm; 7] = [Arm::Full, Arm::NoCe, Arm::NoCd, Arm::NoBoth, Arm::EsOnly, Arm::AsOnly, Arm::OsOnly];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoCe => "no-ce",
            Arm::NoCd => "no-cd",
            Arm::NoBoth => "no-both",
            Arm::EsOnly => "es-only",
            Arm::AsOnly => "as-only",
            Arm::OsOnly => "os-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Arm::ALL.into_iter().find(|a| a.name() == s.trim()).ok_or_else(|| CliError::Config(format!("unknown arm {s:?}")))
    }

    /// Only the loss switches and negative types change between arms.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut tc = base.clone();
        tc.use_ce = !matches!(self, Arm::NoCe | Arm::NoBoth);
        tc.use_cd = !matches!(self, Arm::NoCd | Arm::NoBoth);
        tc.negatives = match self {
            Arm::EsOnly => vec![NegKind::Es],
            Arm::AsOnly => vec![NegKind::As],
            Arm::OsOnly => vec![NegKind::Os],
            _ => NegKind::ALL.to_vec(),
        };
        tc
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Seeds per arm (default 3).
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub first_seed: Option<u64>,
    /// Comma-separated subset of arms (default all seven).
    #[arg(long)]
    pub arms: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub opts: ModelTrainOpts,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub length_alpha: Option<f64>,
    /// Evaluate only the first N test examples.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub seed: u64,
    pub report: EvalReport,
    /// Mean cosine between pooled encodings of each test source and its
    /// entity-swapped counterpart.
    pub es_cosine: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub n_seeds: usize,
    pub cover: MeanSd,
    pub entail: MeanSd,
    pub b4: MeanSd,
    pub es_cosine: MeanSd,
}

pub fn summarize(results: &[ArmResult]) -> Vec<ArmSummary> {
    let mut out = Vec::new();
    for arm in Arm::ALL {
        let rs: Vec<&ArmResult> = results.iter().filter(|r| r.arm == arm).collect();
        if rs.is_empty() {
            continue;
        }
        let col = |f: &dyn Fn(&ArmResult) -> f64| MeanSd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        out.push(ArmSummary {
            arm,
            n_seeds: rs.len(),
            cover: col(&|r| 100.0 * r.report.cover),
            entail: col(&|r| 100.0 * r.report.entail),
            b4: col(&|r| 100.0 * r.report.b4),
            es_cosine: col(&|r| r.es_cosine),
        });
    }
    out
}

pub fn render_table(summary: &[ArmSummary]) -> String {
    let mut s = String::from("| arm | seeds | Cover | Entail | B-4 | ES cos |\n|---|---|---|---|---|---|\n");
    for a in summary {
        let f = |m: &MeanSd| format!("{:.2} ± {:.2}", m.mean, m.sd);
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.4} ± {:.4} |",
            a.arm.name(),
            a.n_seeds,
            f(&a.cover),
            f(&a.entail),
            f(&a.b4),
            a.es_cosine.mean,
            a.es_cosine.sd
        );
    }
    s
}

/// Mean pooled-encoder cosine between each example's source and the source
/// of its entity swap (profiles follow their entities).
pub fn es_cosine<F: colo_core::tensor::Real>(
    params: &ParameterSet<F>,
    config: &ModelConfig,
    lex: &Lexicon,
    vocab: &Vocab,
    examples: &[&Example],
) -> Result<f64> {
    let inc = Incremental::new(params, config)?;
    let mut total = 0.0;
    for e in examples {
        let original = source_ids(e, lex, vocab, config.max_src_len)?;
        let swapped_profiles = [e.profiles[1].clone(), e.profiles[0].clone()];
        let swapped = vocab.tokenize(&source_tokens(&swap_entities(&e.tuple), &swapped_profiles, lex, SurfaceChoice::default(), config.max_src_len)?);
        total += encoder_similarity(&inc, &original, &swapped)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Everything one arm run needs besides the arm and seed.
pub struct ArmSetup<'a> {
    pub corpus: &'a LoadedCorpus,
    pub vocab: &'a Vocab,
    pub model: ModelConfig,
    pub base: TrainConfig,
    pub beam: BeamConfig,
    pub limit: Option<usize>,
}

/// Trains and evaluates one arm; writes its artifacts when `dir` is given.
pub fn run_arm(setup: &ArmSetup, arm: Arm, seed: u64, dir: Option<&Path>) -> Result<(ArmResult, TrainState)> {
    let corpus = setup.corpus;
    let tc = TrainConfig { seed, ..arm.apply(&setup.base) };
    let data = TrainData { lex: &corpus.lex, vocab: setup.vocab, train: corpus.split(Split::Train).0, valid: corpus.split(Split::Valid).0 };
    let mut state = TrainState::new(setup.model.clone(), tc.clone())?;
    let (mut test, mut ids) = corpus.split(Split::Test);
    if let Some(n) = setup.limit {
        test.truncate(n);
        ids.truncate(n);
    }
    let scratch;
    let log_path = match dir {
        Some(d) => d.join(LOG_FILE),
        None => {
            scratch = std::env::temp_dir().join(format!("colo-arm-{}-{}-{seed}.jsonl", std::process::id(), arm.name()));
            scratch.clone()
        }
    };
    train_logged(&mut state, &data, u64::MAX, &log_path)?;
    if dir.is_none() {
        let _ = std::fs::remove_file(&log_path);
    }
    let (report, predictions) = evaluate_corpus(&state.params, &state.model_config, &corpus.lex, setup.vocab, &test, &ids, setup.beam)?;
    let es = es_cosine(&state.params, &state.model_config, &corpus.lex, setup.vocab, &test)?;
    if let Some(d) = dir {
        save_checkpoint(&d.join(CHECKPOINT_FILE), &state)?;
        write_jsonl(&d.join(PREDICTIONS_FILE), &predictions)?;
        write_json(&d.join(REPORT_FILE), &report)?;
        write_json(&d.join(ARM_CONFIG_FILE), &tc)?;
    }
    Ok((ArmResult { arm, seed, report, es_cosine: es, steps: state.step }, state))
}

#[derive(Serialize)]
struct Resolved<'a> {
    options: &'a AblateArgs,
    model: &'a ModelConfig,
    base_train: &'a TrainConfig,
    beam: BeamConfig,
    arms: Vec<Arm>,
    seeds: Vec<u64>,
}

pub struct AblateOutcome {
    pub dir: PathBuf,
    pub results: Vec<ArmResult>,
    pub summary: Vec<ArmSummary>,
    pub manifest: RunManifest,
}

pub fn run(args: AblateArgs) -> Result<AblateOutcome> {
    let started = Utc::now();
    let args = resolve(args.clone(), args.config.as_deref())?;
    let corpus = LoadedCorpus::load(&required(&args.corpus, "corpus")?)?;
    let vocab = Vocab::build(&corpus.lex);
    let first = args.first_seed.unwrap_or(0);
    let seeds: Vec<u64> = (first..first + args.seeds.unwrap_or(3)).collect();
    if seeds.is_empty() {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let arms = match &args.arms {
        Some(list) => list.split(',').map(Arm::parse).collect::<Result<Vec<_>>>()?,
        None => Arm::ALL.to_vec(),
    };
    let model = args.opts.model_config(vocab.len());
    let base = args.opts.train_config(first);
    model.validate()?;
    base.validate()?;
    let beam = beam_config(args.beam, args.length_alpha)?;
    let dir = run_dir(args.out.as_deref(), first, started);
    prepare_dir(&dir, &[RESULTS_FILE, TABLE_FILE], args.force)?;

    let setup = ArmSetup { corpus: &corpus, vocab: &vocab, model: model.clone(), base: base.clone(), beam, limit: args.limit };
    let mut results = Vec::new();
    let mut artifacts = Vec::new();
    for &arm in &arms {
        for &seed in &seeds {
            let arm_dir = dir.join(arm.name()).join(format!("seed{seed}"));
            prepare_dir(&arm_dir, &[CHECKPOINT_FILE, REPORT_FILE], args.force)?;
            let t0 = Instant::now();
            let (r, _) = run_arm(&setup, arm, seed, Some(&arm_dir))?;
            eprintln!(
                "{:<8} seed {seed}: cover {:.2} entail {:.2} b4 {:.2} es-cos {:.4} ({:.0}s)",
                arm.name(),
                100.0 * r.report.cover,
                100.0 * r.report.entail,
                100.0 * r.report.b4,
                r.es_cosine,
                t0.elapsed().as_secs_f64()
            );
            for f in [CHECKPOINT_FILE, REPORT_FILE, ARM_CONFIG_FILE] {
                artifacts.push(arm_dir.join(f));
            }
            results.push(r);
        }
    }
    let summary = summarize(&results);
    let table = render_table(&summary);
    print!("{table}");
    write_json(&dir.join(RESULTS_FILE), &(&results, &summary))?;
    std::fs::write(dir.join(TABLE_FILE), &table)?;

    let resolved = Resolved { options: &args, model: &model, base_train: &base, beam, arms, seeds: seeds.clone() };
    let mut m = ManifestBuilder::new("ablate", &resolved, first, started)?;
    m.input(corpus.corpus_path.clone());
    m.input(corpus.lexicon_path.clone());
    for a in artifacts {
        m.artifact(a);
    }
    m.artifact(dir.join(RESULTS_FILE));
    m.artifact(dir.join(TABLE_FILE));
    let manifest = m.write(&dir)?;
    Ok(AblateOutcome { dir, results, summary, manifest })
}
