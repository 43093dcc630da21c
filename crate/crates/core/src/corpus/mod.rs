//! Synthetic comparative-review corpus: lexicon, template grammar,
//! generator, tuple serialization, vocabulary and JSON Lines I/O.

mod generate;
pub mod grammar;
mod io;
mod lexicon;
mod vocab;

pub use generate::generate_corpus;
pub use io::{read_corpus, read_lexicon, write_corpus, write_lexicon};
pub use lexicon::{build_lexicon, LexItem, Lexicon, OpinionItem, Polarity};
pub use vocab::{
    parse_serialized, serialize_tuple, source_tokens, SurfaceChoice, Vocab, ASP_TAG, ATTR_TAG, BOS, EA_TAG, EB_TAG, EOS, OPN_TAG, PAD, RESERVED, UNK,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ColoError, Result};

/// `(entity_a, entity_b, aspect, opinion)`: `entity_a` beats `entity_b` on
/// `aspect`, described by `opinion`. Components are lexicon ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[String; 4]", into = "[String; 4]")]
pub struct ClrTuple {
    pub entity_a: String,
    pub entity_b: String,
    pub aspect: String,
    pub opinion: String,
}

impl ClrTuple {
    pub fn new(entity_a: impl Into<String>, entity_b: impl Into<String>, aspect: impl Into<String>, opinion: impl Into<String>) -> Self {
        Self { entity_a: entity_a.into(), entity_b: entity_b.into(), aspect: aspect.into(), opinion: opinion.into() }
    }
}

impl From<[String; 4]> for ClrTuple {
    fn from([entity_a, entity_b, aspect, opinion]: [String; 4]) -> Self {
        Self { entity_a, entity_b, aspect, opinion }
    }
}

impl From<ClrTuple> for [String; 4] {
    fn from(t: ClrTuple) -> Self {
        [t.entity_a, t.entity_b, t.aspect, t.opinion]
    }
}

/// The six attribute categories annotated for each product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Brand,
    Ingredient,
    Efficacy,
    Texture,
    Appearance,
    Fragrance,
}

impl Category {
    pub const ALL: [Category; 6] = [Category::Brand, Category::Ingredient, Category::Efficacy, Category::Texture, Category::Appearance, Category::Fragrance];

    pub fn name(self) -> &'static str {
        match self {
            Category::Brand => "brand",
            Category::Ingredient => "ingredient",
            Category::Efficacy => "efficacy",
            Category::Texture => "texture",
            Category::Appearance => "appearance",
            Category::Fragrance => "fragrance",
        }
    }
}

/// Attribute tokens of one entity, per category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityProfile {
    pub entity: String,
    pub attributes: BTreeMap<Category, Vec<String>>,
}

impl EntityProfile {
    pub fn validate(&self) -> Result<()> {
        for c in Category::ALL {
            if self.attributes.get(&c).is_none_or(|v| v.is_empty()) {
                return Err(ColoError::Lexicon(format!("profile of {} has no {} attribute", self.entity, c.name())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = ColoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(ColoError::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tuple: ClrTuple,
    /// Profiles of `entity_a` and `entity_b`, in that order.
    pub profiles: [EntityProfile; 2],
    pub reference: Vec<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_entities: usize,
    pub n_aspects: usize,
    pub n_opinions: usize,
    pub n_aliases_per_item: usize,
    pub n_examples: usize,
    /// train / valid / test fractions.
    pub split_ratio: [f64; 3],
    /// Number of comparative templates in use (prefix of the built-in list).
    pub template_pool_size: usize,
    pub min_distractors: usize,
    pub max_distractors: usize,
    /// Attribute tokens available per category.
    pub attribute_inventory: usize,
    pub min_attrs_per_category: usize,
    pub max_attrs_per_category: usize,
    pub min_reference_len: usize,
    pub max_reference_len: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_entities: 24,
            n_aspects: 8,
            n_opinions: 8,
            n_aliases_per_item: 2,
            n_examples: 2000,
            split_ratio: [0.8, 0.1, 0.1],
            template_pool_size: grammar::COMPARATIVE_TEMPLATES.len(),
            min_distractors: 2,
            max_distractors: 6,
            attribute_inventory: 12,
            min_attrs_per_category: 1,
            max_attrs_per_category: 2,
            min_reference_len: 60,
            max_reference_len: 159,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(ColoError::Config(m));
        if self.n_entities < 2 || self.n_aspects < 2 || self.n_opinions < 2 {
            return err("entity, aspect and opinion counts must be at least 2".into());
        }
        if self.split_ratio.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (self.split_ratio.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return err(format!("split ratio {:?} must be fractions summing to 1", self.split_ratio));
        }
        if self.template_pool_size == 0 || self.template_pool_size > grammar::COMPARATIVE_TEMPLATES.len() {
            return err(format!("template pool size must be in 1..={}", grammar::COMPARATIVE_TEMPLATES.len()));
        }
        if self.min_distractors > self.max_distractors {
            return err("distractor range is empty".into());
        }
        if self.min_attrs_per_category == 0
            || self.min_attrs_per_category > self.max_attrs_per_category
            || self.max_attrs_per_category > self.attribute_inventory
        {
            return err("attributes per category must satisfy 1 <= min <= max <= inventory".into());
        }
        if self.min_reference_len > self.max_reference_len {
            return err("reference length bounds are empty".into());
        }
        Ok(())
    }

    /// Number of distinct tuples the lexicon can express.
    pub fn tuple_capacity(&self) -> u128 {
        let e = self.n_entities as u128;
        e * (e.saturating_sub(1)) * self.n_aspects as u128 * self.n_opinions as u128
    }

    /// `(train, valid, test)` sizes.
    pub fn split_sizes(&self) -> [usize; 3] {
        let n = self.n_examples as f64;
        let train = (n * self.split_ratio[0]).round() as usize;
        let valid = ((n * self.split_ratio[1]).round() as usize).min(self.n_examples - train);
        [train, valid, self.n_examples - train - valid]
    }
}
