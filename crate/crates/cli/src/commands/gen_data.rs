use std::path::PathBuf;

use chrono::Utc;
use clap::Args;
use colo_core::corpus::{generate_corpus, write_corpus, write_lexicon, CorpusConfig};
use colo_core::ColoError;
use serde::{Deserialize, Serialize};

use super::{resolve, CORPUS_FILE, LEXICON_FILE};
use crate::error::{CliError, Result};
use crate::manifest::{prepare_dir, run_dir, ManifestBuilder, RunManifest};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    /// Flat key = value file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (default: runs/<timestamp>-seed<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_examples: Option<usize>,
    #[arg(long)]
    pub n_entities: Option<usize>,
    #[arg(long)]
    pub n_aspects: Option<usize>,
    #[arg(long)]
    pub n_opinions: Option<usize>,
    #[arg(long)]
    pub n_aliases: Option<usize>,
    #[arg(long)]
    pub template_pool: Option<usize>,
    #[arg(long)]
    pub min_distractors: Option<usize>,
    #[arg(long)]
    pub max_distractors: Option<usize>,
    #[arg(long)]
    pub attribute_inventory: Option<usize>,
    #[arg(long)]
    pub min_reference_len: Option<usize>,
    #[arg(long)]
    pub max_reference_len: Option<usize>,
    /// Replace existing files in the output directory.
    #[arg(long)]
    pub force: bool,
}

impl GenDataArgs {
    pub fn corpus_config(&self) -> CorpusConfig {
        let d = CorpusConfig::default();
        CorpusConfig {
            n_entities: self.n_entities.unwrap_or(d.n_entities),
            n_aspects: self.n_aspects.unwrap_or(d.n_aspects),
            n_opinions: self.n_opinions.unwrap_or(d.n_opinions),
            n_aliases_per_item: self.n_aliases.unwrap_or(d.n_aliases_per_item),
            n_examples: self.n_examples.unwrap_or(d.n_examples),
            template_pool_size: self.template_pool.unwrap_or(d.template_pool_size),
            min_distractors: self.min_distractors.unwrap_or(d.min_distractors),
            max_distractors: self.max_distractors.unwrap_or(d.max_distractors),
            attribute_inventory: self.attribute_inventory.unwrap_or(d.attribute_inventory),
            min_reference_len: self.min_reference_len.unwrap_or(d.min_reference_len),
            max_reference_len: self.max_reference_len.unwrap_or(d.max_reference_len),
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    options: &'a GenDataArgs,
    corpus: CorpusConfig,
}

pub fn run(args: GenDataArgs) -> Result<(PathBuf, RunManifest)> {
    let started = Utc::now();
    let args = resolve(args.clone(), args.config.as_deref())?;
    let config = args.corpus_config();
    let dir = run_dir(args.out.as_deref(), config.seed, started);
    prepare_dir(&dir, &[CORPUS_FILE, LEXICON_FILE], args.force)?;

    let (lex, examples) = generate_corpus(&config).map_err(|e| match e {
        ColoError::Capacity(m) => CliError::Data(format!("{m}; raise n_entities, n_aspects or n_opinions, or lower n_examples")),
        other => other.into(),
    })?;
    let (corpus_path, lexicon_path) = (dir.join(CORPUS_FILE), dir.join(LEXICON_FILE));
    write_corpus(&corpus_path, &examples)?;
    write_lexicon(&lexicon_path, &lex)?;

    let mut m = ManifestBuilder::new("gen-data", &Resolved { options: &args, corpus: config.clone() }, config.seed, started)?;
    m.artifact(corpus_path);
    m.artifact(lexicon_path);
    let manifest = m.write(&dir)?;
    Ok((dir, manifest))
}
