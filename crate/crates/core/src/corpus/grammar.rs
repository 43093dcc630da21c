//! Template grammar shared by the corpus generator and the entailment oracle.
//!
//! Comparative templates use the slots `{W}` (winner, `entity_a`), `{L}`
//! (loser, `entity_b`), `{A}` (aspect), `{O}` (opinion describing the winner)
//! and `{N}` (antonym of the opinion, describing the loser). Templates whose
//! first entity slot is `{L}` are "inverted": the surface order differs but
//! the relation does not.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Category, ClrTuple, EntityProfile, Lexicon};
use crate::error::{ColoError, Result};

pub const COMPARATIVE_TEMPLATES: &[&str] = &[
    "{W} outperforms {L} in {A} , offering a {O} experience .",
    "when comparing {A} , {W} is clearly ahead of {L} and feels {O} .",
    "{W} beats {L} on {A} , which makes it {O} overall .",
    "in terms of {A} , {W} surpasses {L} with a {O} result .",
    "{L} falls behind {W} in {A} , while {W} stays {O} .",
    "{L} is worse than {W} on {A} ; {L} feels {N} whereas {W} feels {O} .",
    "compared with {W} , {L} lags in {A} and {W} remains {O} .",
];

/// Attribute sentences about one entity `{E}`; other slots name a category.
pub const DISTRACTOR_TEMPLATES: &[&str] = &[
    "{E} is a {brand} product and users say its {efficacy} effect shows within days .",
    "with {ingredient} as a key ingredient , {E} has a {texture} texture that absorbs quickly .",
    "the packaging of {E} has a {appearance} look that stands out on the shelf .",
    "reviewers mention that {E} carries a {fragrance} scent that lasts most of the day .",
    "according to the label , {E} combines {ingredient} with a {texture} finish for a {efficacy} result .",
    "people who tried {E} describe its {fragrance} smell and {appearance} design as pleasant .",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Word(&'static str),
    Winner,
    Loser,
    Aspect,
    Opinion,
    Antonym,
    Entity,
    Attribute(Category),
}

fn parse_slot(token: &'static str) -> Slot {
    match token {
        "{W}" => Slot::Winner,
        "{L}" => Slot::Loser,
        "{A}" => Slot::Aspect,
        "{O}" => Slot::Opinion,
        "{N}" => Slot::Antonym,
        "{E}" => Slot::Entity,
        _ => Category::ALL
            .iter()
            .find(|c| token.len() > 2 && token.starts_with('{') && token.ends_with('}') && &token[1..token.len() - 1] == c.name())
            .map(|&c| Slot::Attribute(c))
            .unwrap_or(Slot::Word(token)),
    }
}

#[derive(Debug, Clone)]
pub struct Template {
    pub pattern: &'static str,
    pub slots: Vec<Slot>,
}

impl Template {
    pub fn parse(pattern: &'static str) -> Self {
        Self { pattern, slots: pattern.split_whitespace().map(parse_slot).collect() }
    }

    /// First entity mention is the loser.
    pub fn inverted(&self) -> bool {
        self.slots.iter().find(|s| matches!(s, Slot::Winner | Slot::Loser)) == Some(&Slot::Loser)
    }

    pub fn needs_antonym(&self) -> bool {
        self.slots.contains(&Slot::Antonym)
    }
}

/// The first `pool` comparative templates.
pub fn comparative_templates(pool: usize) -> Vec<Template> {
    COMPARATIVE_TEMPLATES.iter().take(pool).map(|p| Template::parse(p)).collect()
}

pub fn distractor_templates() -> Vec<Template> {
    DISTRACTOR_TEMPLATES.iter().map(|p| Template::parse(p)).collect()
}

/// Every literal word used by any template.
pub fn literal_words() -> BTreeSet<&'static str> {
    COMPARATIVE_TEMPLATES
        .iter()
        .chain(DISTRACTOR_TEMPLATES)
        .flat_map(|p| p.split_whitespace())
        .filter_map(|w| match parse_slot(w) {
            Slot::Word(w) => Some(w),
            _ => None,
        })
        .collect()
}

fn pick<'a, R: Rng + ?Sized>(surfaces: &'a [String], rng: &mut R) -> &'a str {
    surfaces.choose(rng).map(String::as_str).unwrap_or_default()
}

fn push_surface(out: &mut Vec<String>, surface: &str) {
    out.extend(surface.split_whitespace().map(str::to_string));
}

/// Instantiates a comparative template for `t`, drawing a random surface
/// form for every slot.
pub fn realize_comparative<R: Rng + ?Sized>(template: &Template, t: &ClrTuple, lex: &Lexicon, rng: &mut R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for slot in &template.slots {
        match *slot {
            Slot::Word(w) => out.push(w.to_string()),
            Slot::Winner => push_surface(&mut out, pick(&lex.entity(&t.entity_a)?.surfaces, rng)),
            Slot::Loser => push_surface(&mut out, pick(&lex.entity(&t.entity_b)?.surfaces, rng)),
            Slot::Aspect => push_surface(&mut out, pick(&lex.aspect(&t.aspect)?.surfaces, rng)),
            Slot::Opinion => push_surface(&mut out, pick(&lex.opinion(&t.opinion)?.surfaces, rng)),
            Slot::Antonym => {
                let ant = lex.antonym(&t.opinion)?.ok_or_else(|| ColoError::Lexicon(format!("template needs an antonym of {}", t.opinion)))?;
                push_surface(&mut out, pick(&lex.opinion(ant)?.surfaces, rng));
            }
            Slot::Entity | Slot::Attribute(_) => return Err(ColoError::Config(format!("distractor slot in comparative template {:?}", template.pattern))),
        }
    }
    Ok(out)
}

/// Instantiates a distractor sentence about the entity of `profile`.
pub fn realize_distractor<R: Rng + ?Sized>(template: &Template, profile: &EntityProfile, lex: &Lexicon, rng: &mut R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for slot in &template.slots {
        match *slot {
            Slot::Word(w) => out.push(w.to_string()),
            Slot::Entity => push_surface(&mut out, pick(&lex.entity(&profile.entity)?.surfaces, rng)),
            Slot::Attribute(c) => {
                let values = profile.attributes.get(&c).map(Vec::as_slice).unwrap_or_default();
                out.push(pick(values, rng).to_string());
            }
            _ => return Err(ColoError::Config(format!("comparative slot in distractor template {:?}", template.pattern))),
        }
    }
    Ok(out)
}
