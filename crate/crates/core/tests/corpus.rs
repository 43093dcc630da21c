use std::collections::{BTreeSet, HashMap, HashSet};

use colo_core::contrastive::swap_entities;
use colo_core::corpus::grammar::{COMPARATIVE_TEMPLATES, DISTRACTOR_TEMPLATES};
use colo_core::corpus::{
    build_lexicon, generate_corpus, parse_serialized, read_corpus, read_lexicon, serialize_tuple, source_tokens, write_corpus, write_lexicon, CorpusConfig,
    Example, Lexicon, Polarity, Split, SurfaceChoice, Vocab, RESERVED, UNK,
};
use colo_core::ColoError;

fn corpus() -> (Lexicon, Vec<Example>) {
    generate_corpus(&CorpusConfig::default()).unwrap()
}

#[test]
fn corpus_file_round_trips_with_one_line_per_example() {
    let (lex, examples) = corpus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    write_corpus(&path, &examples).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), examples.len());
    assert!(text.is_ascii());
    assert_eq!(read_corpus(&path).unwrap(), examples);

    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let keys: BTreeSet<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["profiles", "reference", "split", "tuple"]));

    let lex_path = dir.path().join("lexicon.json");
    write_lexicon(&lex_path, &lex).unwrap();
    assert_eq!(read_lexicon(&lex_path).unwrap(), lex);
}

#[test]
fn a_corrupt_line_is_reported_by_number() {
    let (_, examples) = corpus();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    write_corpus(&path, &examples[..20]).unwrap();
    let mut lines: Vec<String> = std::fs::read_to_string(&path).unwrap().lines().map(str::to_string).collect();
    lines[12] = lines[12].replace("\"split\"", "\"spilt\"");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    match read_corpus(&path) {
        Err(ColoError::Parse { line, .. }) => assert_eq!(line, 13),
        other => panic!("expected a parse error, got {other:?}"),
    }

    lines[12] = "{not json".into();
    std::fs::write(&path, lines.join("\n")).unwrap();
    let err = read_corpus(&path).unwrap_err();
    assert!(err.to_string().contains("13"), "{err}");
}

#[test]
fn same_config_writes_byte_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, seed: u64| {
        let (_, examples) = generate_corpus(&CorpusConfig { seed, ..CorpusConfig::default() }).unwrap();
        let path = dir.path().join(name);
        write_corpus(&path, &examples).unwrap();
        std::fs::read(path).unwrap()
    };
    let a = write("a.jsonl", 7);
    assert_eq!(a, write("b.jsonl", 7));
    assert_ne!(a, write("c.jsonl", 8));
}

#[test]
fn splits_follow_the_ratio_and_share_no_reference() {
    let (_, examples) = corpus();
    let count = |s| examples.iter().filter(|e| e.split == s).count();
    assert_eq!([count(Split::Train), count(Split::Valid), count(Split::Test)], [1600, 200, 200]);
    let mut seen: HashMap<&[String], Split> = HashMap::new();
    for e in &examples {
        if let Some(prev) = seen.insert(&e.reference, e.split) {
            assert_eq!(prev, e.split, "reference shared across splits");
        }
    }
}

#[test]
fn reference_lengths_stay_within_bounds() {
    let config = CorpusConfig::default();
    let (_, examples) = corpus();
    let mut histogram = [0usize; 200];
    for e in &examples {
        histogram[e.reference.len()] += 1;
    }
    let inside: usize = histogram[config.min_reference_len..=config.max_reference_len].iter().sum();
    assert_eq!(inside, examples.len());
    // Spread, not a single length.
    assert!(histogram.iter().filter(|&&n| n > 0).count() > 20);
}

#[test]
fn references_mention_every_component_and_aliases_are_sound() {
    let (lex, examples) = corpus();
    let mut owner: HashMap<&str, Vec<&str>> = HashMap::new();
    for item in lex.entities.iter().chain(&lex.aspects) {
        for s in &item.surfaces {
            owner.entry(s).or_default().push(&item.id);
        }
    }
    for o in &lex.opinions {
        for s in &o.surfaces {
            owner.entry(s).or_default().push(&o.id);
        }
    }
    assert!(owner.values().all(|ids| ids.len() == 1));

    for e in &examples {
        let words: HashSet<&str> = e.reference.iter().map(String::as_str).collect();
        let mentions = |id: &str| words.iter().any(|w| owner.get(w).is_some_and(|ids| ids[0] == id));
        for id in [&e.tuple.entity_a, &e.tuple.entity_b, &e.tuple.aspect, &e.tuple.opinion] {
            assert!(mentions(id), "{id} missing");
        }
        for w in &e.reference {
            let looks_like_item = ["ENT_", "ASP_", "POS_", "NEG_"].iter().any(|p| w.starts_with(p));
            assert_eq!(looks_like_item, owner.contains_key(w.as_str()), "{w}");
        }
    }
}

#[test]
fn lexicon_invariants_hold() {
    let lex = build_lexicon(&CorpusConfig::default()).unwrap();
    for o in &lex.opinions {
        let ant = o.antonym.as_deref().expect("even opinion count pairs everything");
        assert_ne!(ant, o.id);
        let other = lex.opinion(ant).unwrap();
        assert_eq!(other.antonym.as_deref(), Some(o.id.as_str()));
        assert_ne!(other.polarity, o.polarity);
    }
    let positives = lex.opinions.iter().filter(|o| o.polarity == Polarity::Positive).count();
    assert_eq!(positives * 2, lex.opinions.len());
}

/// Words a template contributes on its own, read straight off the strings.
fn template_words() -> BTreeSet<&'static str> {
    COMPARATIVE_TEMPLATES.iter().chain(DISTRACTOR_TEMPLATES).flat_map(|t| t.split_whitespace()).filter(|w| !(w.starts_with('{') && w.ends_with('}'))).collect()
}

#[test]
fn vocabulary_size_is_reserved_plus_distinct_tokens() {
    let lex = build_lexicon(&CorpusConfig::default()).unwrap();
    let vocab = Vocab::build(&lex);
    let mut words: BTreeSet<String> = template_words().into_iter().map(str::to_string).collect();
    words.insert("[ATTR]".into());
    for item in lex.entities.iter().chain(&lex.aspects) {
        words.extend(item.surfaces.iter().cloned());
    }
    for o in &lex.opinions {
        words.extend(o.surfaces.iter().cloned());
    }
    for values in lex.attributes.values() {
        words.extend(values.iter().cloned());
    }
    assert_eq!(vocab.len(), RESERVED.len() + words.len());

    let (_, examples) = corpus();
    let config = CorpusConfig::default();
    for e in &examples {
        assert!(!vocab.tokenize(&e.reference).contains(&UNK));
        let src = source_tokens(&e.tuple, &e.profiles, &lex, SurfaceChoice::default(), 48).unwrap();
        assert!(!vocab.tokenize(&src).contains(&UNK));
    }
    assert_eq!(examples.len(), config.n_examples);
}

#[test]
fn serializations_fit_the_source_budget_and_parse_back() {
    let lex = build_lexicon(&CorpusConfig::default()).unwrap();
    let longest = |surfaces: &[String]| surfaces.iter().map(|s| s.split_whitespace().count()).max().unwrap();
    let bound = 4
        + 2 * lex.entities.iter().map(|e| longest(&e.surfaces)).max().unwrap()
        + lex.aspects.iter().map(|a| longest(&a.surfaces)).max().unwrap()
        + lex.opinions.iter().map(|o| longest(&o.surfaces)).max().unwrap();
    assert!(bound <= 48);

    let (_, examples) = corpus();
    for e in examples.iter().take(300) {
        for k in 0..3 {
            let choice = SurfaceChoice { entity_a: k, entity_b: (k + 1) % 3, aspect: k, opinion: (k + 2) % 3 };
            let s = serialize_tuple(&e.tuple, &lex, choice).unwrap();
            assert!(s.len() <= bound);
            assert_eq!(parse_serialized(&s, &lex).unwrap(), e.tuple);
        }
        let a = serialize_tuple(&e.tuple, &lex, SurfaceChoice::default()).unwrap();
        let b = serialize_tuple(&swap_entities(&e.tuple), &lex, SurfaceChoice::default()).unwrap();
        let differing: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(differing, vec![1, 3]);

        let src = source_tokens(&e.tuple, &e.profiles, &lex, SurfaceChoice::default(), 48).unwrap();
        assert!(src.len() <= 48);
        assert_eq!(parse_serialized(&src, &lex).unwrap(), e.tuple);
    }
}
