//! One module per subcommand, plus the corpus loading they share.

pub mod ablate;
pub mod evaluate;
pub mod gen_data;
pub mod generate;
pub mod gradcheck;
pub mod train;

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use colo_core::corpus::{read_corpus, read_lexicon, Example, Lexicon, Split};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{merge, read_flat};
use crate::error::{CliError, Result};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOG_FILE: &str = "log.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";

/// Applies the config file, if any, under the flags.
pub fn resolve<A: Serialize + DeserializeOwned>(args: A, config: Option<&Path>) -> Result<A> {
    match config {
        Some(path) => merge(args, &read_flat(path)?),
        None => Ok(args),
    }
}

pub fn required<T: Clone>(value: &Option<T>, name: &str) -> Result<T> {
    value.clone().ok_or_else(|| CliError::Config(format!("--{name} is required")))
}

/// Corpus and lexicon paths from either a corpus directory or the corpus
/// file itself (lexicon beside it).
pub fn corpus_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(CORPUS_FILE), path.join(LEXICON_FILE))
    } else {
        let dir = path.parent().unwrap_or(Path::new("."));
        (path.to_path_buf(), dir.join(LEXICON_FILE))
    }
}

pub struct LoadedCorpus {
    pub corpus_path: PathBuf,
    pub lexicon_path: PathBuf,
    pub lex: Lexicon,
    pub examples: Vec<Example>,
}

impl LoadedCorpus {
    pub fn load(path: &Path) -> Result<Self> {
        let (corpus_path, lexicon_path) = corpus_paths(path);
        for p in [&corpus_path, &lexicon_path] {
            if !p.is_file() {
                return Err(CliError::Data(format!("missing corpus file {}", p.display())));
            }
        }
        let lex = read_lexicon(&lexicon_path)?;
        let examples = read_corpus(&corpus_path)?;
        Ok(Self { corpus_path, lexicon_path, lex, examples })
    }

    /// Examples of one split with their ids (0-based corpus line numbers).
    pub fn split(&self, split: Split) -> (Vec<&Example>, Vec<usize>) {
        self.examples.iter().enumerate().filter(|(_, e)| e.split == split).map(|(i, e)| (e, i)).unzip()
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
