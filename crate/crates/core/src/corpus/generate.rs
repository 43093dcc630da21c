use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grammar::{self, Template};
use super::{build_lexicon, ClrTuple, CorpusConfig, EntityProfile, Example, Lexicon, Split};
use crate::error::{ColoError, Result};
use crate::rng::derive_seed;

const MAX_LENGTH_ATTEMPTS: usize = 1000;

fn build_profiles(lex: &Lexicon, config: &CorpusConfig, rng: &mut ChaCha8Rng) -> BTreeMap<String, EntityProfile> {
    lex.entities
        .iter()
        .map(|e| {
            let attributes = lex
                .attributes
                .iter()
                .map(|(&c, inventory)| {
                    let k = rng.gen_range(config.min_attrs_per_category..=config.max_attrs_per_category).min(inventory.len());
                    let mut picked = index::sample(rng, inventory.len(), k).into_vec();
                    picked.sort_unstable();
                    (c, picked.into_iter().map(|i| inventory[i].clone()).collect())
                })
                .collect();
            (e.id.clone(), EntityProfile { entity: e.id.clone(), attributes })
        })
        .collect()
}

fn tuple_at(lex: &Lexicon, mut code: u128) -> ClrTuple {
    let n_e = lex.entities.len() as u128;
    let opinion = (code % lex.opinions.len() as u128) as usize;
    code /= lex.opinions.len() as u128;
    let aspect = (code % lex.aspects.len() as u128) as usize;
    code /= lex.aspects.len() as u128;
    let b_off = (code % (n_e - 1)) as usize;
    let a = (code / (n_e - 1)) as usize;
    let b = if b_off >= a { b_off + 1 } else { b_off };
    ClrTuple::new(&lex.entities[a].id, &lex.entities[b].id, &lex.aspects[aspect].id, &lex.opinions[opinion].id)
}

/// Distinct tuples in random order.
fn sample_tuples(lex: &Lexicon, config: &CorpusConfig, rng: &mut ChaCha8Rng) -> Result<Vec<ClrTuple>> {
    let capacity = config.tuple_capacity();
    let n = config.n_examples as u128;
    if n > capacity {
        return Err(ColoError::Capacity(format!("{n} unique tuples requested but only {capacity} exist")));
    }
    if n * 2 > capacity {
        let mut all: Vec<u128> = (0..capacity).collect();
        all.shuffle(rng);
        return Ok(all[..config.n_examples].iter().map(|&c| tuple_at(lex, c)).collect());
    }
    let mut seen = HashSet::with_capacity(config.n_examples);
    let mut out = Vec::with_capacity(config.n_examples);
    while out.len() < config.n_examples {
        let code = rng.gen_range(0..capacity);
        if seen.insert(code) {
            out.push(tuple_at(lex, code));
        }
    }
    Ok(out)
}

/// One comparative sentence placed among `k` distractor sentences about the
/// two profiles, resampled until the length is within bounds.
fn realize_reference(
    t: &ClrTuple,
    profiles: &[EntityProfile; 2],
    lex: &Lexicon,
    config: &CorpusConfig,
    comparative: &[Template],
    distractors: &[Template],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>> {
    let has_antonym = lex.antonym(&t.opinion)?.is_some();
    let usable: Vec<&Template> = comparative.iter().filter(|tpl| has_antonym || !tpl.needs_antonym()).collect();
    if usable.is_empty() {
        return Err(ColoError::Config(format!("no comparative template can express opinion {}", t.opinion)));
    }
    for _ in 0..MAX_LENGTH_ATTEMPTS {
        let k = rng.gen_range(config.min_distractors..=config.max_distractors);
        let position = rng.gen_range(0..=k);
        let mut tokens = Vec::new();
        for slot in 0..=k {
            if slot == position {
                let tpl = usable.choose(rng).copied().unwrap_or(&comparative[0]);
                tokens.extend(grammar::realize_comparative(tpl, t, lex, rng)?);
            } else {
                let tpl = distractors.choose(rng).unwrap_or(&distractors[0]);
                let profile = &profiles[rng.gen_range(0..2)];
                tokens.extend(grammar::realize_distractor(tpl, profile, lex, rng)?);
            }
        }
        if (config.min_reference_len..=config.max_reference_len).contains(&tokens.len()) {
            return Ok(tokens);
        }
    }
    Err(ColoError::Config(format!(
        "could not realize a reference of {}..={} tokens in {MAX_LENGTH_ATTEMPTS} attempts",
        config.min_reference_len, config.max_reference_len
    )))
}

/// Generates the lexicon and the corpus. Examples are ordered train, valid,
/// test; the sentence-level randomness of example `i` depends only on
/// `(seed, i)`.
pub fn generate_corpus(config: &CorpusConfig) -> Result<(Lexicon, Vec<Example>)> {
    let lex = build_lexicon(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let profiles = build_profiles(&lex, config, &mut rng);
    let tuples = sample_tuples(&lex, config, &mut rng)?;
    let comparative = grammar::comparative_templates(config.template_pool_size);
    let distractors = grammar::distractor_templates();
    let [n_train, n_valid, _] = config.split_sizes();

    let mut examples = Vec::with_capacity(tuples.len());
    for (i, tuple) in tuples.into_iter().enumerate() {
        let pair = [profiles[&tuple.entity_a].clone(), profiles[&tuple.entity_b].clone()];
        let mut ex_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, i as u64));
        let reference = realize_reference(&tuple, &pair, &lex, config, &comparative, &distractors, &mut ex_rng)?;
        let split = match i {
            i if i < n_train => Split::Train,
            i if i < n_train + n_valid => Split::Valid,
            _ => Split::Test,
        };
        examples.push(Example { tuple, profiles: pair, reference, split });
    }
    Ok((lex, examples))
}
