use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Category, ClrTuple, EntityProfile, Example, Lexicon, Split};
use crate::error::{ColoError, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tuple: ClrTuple,
    profiles: [BTreeMap<Category, Vec<String>>; 2],
    reference: Vec<String>,
    split: Split,
}

impl From<&Example> for Record {
    fn from(e: &Example) -> Self {
        Self {
            tuple: e.tuple.clone(),
            profiles: [e.profiles[0].attributes.clone(), e.profiles[1].attributes.clone()],
            reference: e.reference.clone(),
            split: e.split,
        }
    }
}

impl Record {
    fn into_example(self) -> std::result::Result<Example, String> {
        let [pa, pb] = self.profiles;
        let profiles =
            [EntityProfile { entity: self.tuple.entity_a.clone(), attributes: pa }, EntityProfile { entity: self.tuple.entity_b.clone(), attributes: pb }];
        for p in &profiles {
            p.validate().map_err(|e| e.to_string())?;
        }
        if self.tuple.entity_a == self.tuple.entity_b {
            return Err(format!("tuple compares {} with itself", self.tuple.entity_a));
        }
        let text = self.reference.iter().chain(profiles.iter().flat_map(|p| p.attributes.values().flatten()));
        if let Some(bad) = text.clone().find(|t| t.is_empty() || !t.is_ascii() || t.contains(char::is_whitespace)) {
            return Err(format!("token {bad:?} is not a non-empty ASCII word"));
        }
        Ok(Example { tuple: self.tuple, profiles, reference: self.reference, split: self.split })
    }
}

pub fn write_corpus(path: &Path, examples: &[Example]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut w, &Record::from(e))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus file; errors name the offending 1-based line.
pub fn read_corpus(path: &Path) -> Result<Vec<Example>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let parse_err = |detail: String| ColoError::Parse { line: i + 1, detail };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        out.push(record.into_example().map_err(parse_err)?);
    }
    Ok(out)
}

pub fn write_lexicon(path: &Path, lex: &Lexicon) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, lex)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_lexicon(path: &Path) -> Result<Lexicon> {
    let lex: Lexicon = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    lex.validate()?;
    Ok(lex)
}
