use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Category, ClrTuple, CorpusConfig};
use crate::error::{ColoError, Result};

/// An id with its surface forms; index 0 is the canonical surface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexItem {
    pub id: String,
    pub surfaces: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "+")]
    Positive,
    #[serde(rename = "-")]
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpinionItem {
    pub id: String,
    pub surfaces: Vec<String>,
    pub polarity: Polarity,
    pub antonym: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entities: Vec<LexItem>,
    pub aspects: Vec<LexItem>,
    pub opinions: Vec<OpinionItem>,
    pub attributes: BTreeMap<Category, Vec<String>>,
}

fn aliases(id: &str, n: usize) -> Vec<String> {
    std::iter::once(id.to_string()).chain((1..=n).map(|k| format!("{id}_ALT{k}"))).collect()
}

/// Deterministic lexicon: `ENT_007` style ids with `_ALTk` aliases,
/// opinions in `POS_k` / `NEG_k` antonym pairs (an odd count leaves the last
/// positive opinion unpaired).
pub fn build_lexicon(config: &CorpusConfig) -> Result<Lexicon> {
    config.validate()?;
    let n_alias = config.n_aliases_per_item;
    let entities = (0..config.n_entities)
        .map(|i| {
            let id = format!("ENT_{i:03}");
            LexItem { surfaces: aliases(&id, n_alias), id }
        })
        .collect();
    let aspects = (0..config.n_aspects)
        .map(|i| {
            let id = format!("ASP_{i:02}");
            LexItem { surfaces: aliases(&id, n_alias), id }
        })
        .collect();
    let mut opinions = Vec::with_capacity(config.n_opinions);
    for k in 0..config.n_opinions / 2 {
        let (pos, neg) = (format!("POS_{k:02}"), format!("NEG_{k:02}"));
        opinions.push(OpinionItem { surfaces: aliases(&pos, n_alias), id: pos.clone(), polarity: Polarity::Positive, antonym: Some(neg.clone()) });
        opinions.push(OpinionItem { surfaces: aliases(&neg, n_alias), id: neg, polarity: Polarity::Negative, antonym: Some(pos) });
    }
    if config.n_opinions % 2 == 1 {
        let id = format!("POS_{:02}", config.n_opinions / 2);
        opinions.push(OpinionItem { surfaces: aliases(&id, n_alias), id, polarity: Polarity::Positive, antonym: None });
    }
    let attributes = Category::ALL.iter().map(|&c| (c, (0..config.attribute_inventory).map(|k| format!("{}:{k:02}", c.name())).collect())).collect();
    let lex = Lexicon { entities, aspects, opinions, attributes };
    lex.validate()?;
    Ok(lex)
}

impl Lexicon {
    pub fn entity(&self, id: &str) -> Result<&LexItem> {
        self.entities.iter().find(|e| e.id == id).ok_or_else(|| ColoError::Lexicon(format!("unknown entity {id}")))
    }

    pub fn aspect(&self, id: &str) -> Result<&LexItem> {
        self.aspects.iter().find(|e| e.id == id).ok_or_else(|| ColoError::Lexicon(format!("unknown aspect {id}")))
    }

    pub fn opinion(&self, id: &str) -> Result<&OpinionItem> {
        self.opinions.iter().find(|e| e.id == id).ok_or_else(|| ColoError::Lexicon(format!("unknown opinion {id}")))
    }

    pub fn antonym(&self, id: &str) -> Result<Option<&str>> {
        Ok(self.opinion(id)?.antonym.as_deref())
    }

    /// Checks that every tuple component exists and the entities differ.
    pub fn check_tuple(&self, t: &ClrTuple) -> Result<()> {
        self.entity(&t.entity_a)?;
        self.entity(&t.entity_b)?;
        self.aspect(&t.aspect)?;
        self.opinion(&t.opinion)?;
        if t.entity_a == t.entity_b {
            return Err(ColoError::Lexicon(format!("tuple compares {} with itself", t.entity_a)));
        }
        Ok(())
    }

    /// Structural invariants: non-empty distinct surfaces, globally
    /// unambiguous surfaces, symmetric irreflexive antonyms of opposite polarity.
    pub fn validate(&self) -> Result<()> {
        let mut seen_ids = HashSet::new();
        let mut seen_surfaces = HashSet::new();
        let items = self.entities.iter().chain(&self.aspects).map(|e| (&e.id, &e.surfaces)).chain(self.opinions.iter().map(|o| (&o.id, &o.surfaces)));
        for (id, surfaces) in items {
            if !seen_ids.insert(id.clone()) {
                return Err(ColoError::Lexicon(format!("duplicate id {id}")));
            }
            if surfaces.is_empty() {
                return Err(ColoError::Lexicon(format!("{id} has no surface forms")));
            }
            for s in surfaces {
                if s.split_whitespace().next().is_none() {
                    return Err(ColoError::Lexicon(format!("{id} has a blank surface form")));
                }
                if !seen_surfaces.insert(s.clone()) {
                    return Err(ColoError::Lexicon(format!("surface {s:?} is ambiguous")));
                }
            }
        }
        for o in &self.opinions {
            if let Some(a) = &o.antonym {
                if a == &o.id {
                    return Err(ColoError::Lexicon(format!("{} is its own antonym", o.id)));
                }
                let other = self.opinion(a)?;
                if other.antonym.as_deref() != Some(o.id.as_str()) {
                    return Err(ColoError::Lexicon(format!("antonym {} -> {a} is not symmetric", o.id)));
                }
                if other.polarity == o.polarity {
                    return Err(ColoError::Lexicon(format!("antonyms {} and {a} share a polarity", o.id)));
                }
            }
        }
        for c in Category::ALL {
            if self.attributes.get(&c).is_none_or(|v| v.is_empty()) {
                return Err(ColoError::Lexicon(format!("no attributes for category {}", c.name())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n_opinions: usize) -> CorpusConfig {
        CorpusConfig { n_opinions, ..CorpusConfig::default() }
    }

    #[test]
    fn opinions_come_in_balanced_antonym_pairs() {
        let lex = build_lexicon(&config(4)).unwrap();
        let pairs = lex.opinions.iter().filter(|o| o.antonym.is_some()).count() / 2;
        assert_eq!(pairs, 2);
        let pos = lex.opinions.iter().filter(|o| o.polarity == Polarity::Positive).count();
        assert_eq!(pos, 2);
        assert_eq!(lex.antonym("POS_01").unwrap(), Some("NEG_01"));
    }

    #[test]
    fn odd_opinion_count_leaves_one_unpaired() {
        let lex = build_lexicon(&config(5)).unwrap();
        assert_eq!(lex.opinions.iter().filter(|o| o.antonym.is_none()).count(), 1);
    }

    #[test]
    fn same_config_same_lexicon() {
        assert_eq!(build_lexicon(&config(6)).unwrap(), build_lexicon(&config(6)).unwrap());
    }

    #[test]
    fn alias_sets_are_disjoint() {
        let lex = build_lexicon(&CorpusConfig::default()).unwrap();
        let mut all = HashSet::new();
        for e in lex.entities.iter().chain(&lex.aspects) {
            for s in &e.surfaces {
                assert!(all.insert(s.clone()));
            }
        }
        assert_eq!(lex.entity("ENT_007").unwrap().surfaces[1], "ENT_007_ALT1");
    }

    #[test]
    fn validation_rejects_asymmetric_antonyms() {
        let mut lex = build_lexicon(&config(4)).unwrap();
        lex.opinions[1].antonym = Some("POS_01".into());
        assert!(lex.validate().is_err());
    }

    #[test]
    fn too_small_counts_rejected() {
        assert!(build_lexicon(&CorpusConfig { n_aspects: 1, ..CorpusConfig::default() }).is_err());
    }
}
