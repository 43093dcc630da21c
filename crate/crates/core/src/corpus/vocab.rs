use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{grammar, ClrTuple, EntityProfile, Lexicon};
use crate::error::{ColoError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const EA_TAG: usize = 4;
pub const EB_TAG: usize = 5;
pub const ASP_TAG: usize = 6;
pub const OPN_TAG: usize = 7;

pub const RESERVED: [&str; 8] = ["<pad>", "<bos>", "<eos>", "<unk>", "[EA]", "[EB]", "[ASP]", "[OPN]"];

/// Marks the start of an entity's attribute list in the source sequence.
pub const ATTR_TAG: &str = "[ATTR]";

/// Token <-> id mapping. Reserved tokens occupy ids 0..8; the rest are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Everything the lexicon and grammar can emit.
    pub fn build(lex: &Lexicon) -> Self {
        let mut words: BTreeSet<String> = BTreeSet::new();
        words.insert(ATTR_TAG.to_string());
        let surfaces = lex.entities.iter().chain(&lex.aspects).flat_map(|e| &e.surfaces).chain(lex.opinions.iter().flat_map(|o| &o.surfaces));
        for s in surfaces {
            words.extend(s.split_whitespace().map(str::to_string));
        }
        for values in lex.attributes.values() {
            words.extend(values.iter().cloned());
        }
        words.extend(grammar::literal_words().into_iter().map(str::to_string));
        for r in RESERVED {
            words.remove(r);
        }
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).chain(words).collect())
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn tokenize<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Detokenizes generated ids, dropping BOS/EOS/PAD.
    pub fn detokenize_output(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().filter(|&&i| !matches!(i, PAD | BOS | EOS)).map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Which surface form (index into the lexicon's surface list) realizes each
/// tuple component. All zeros is the canonical realization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SurfaceChoice {
    pub entity_a: usize,
    pub entity_b: usize,
    pub aspect: usize,
    pub opinion: usize,
}

impl SurfaceChoice {
    /// A choice that differs from `original` in every component that has
    /// more than one surface form.
    pub fn alternative<R: Rng + ?Sized>(t: &ClrTuple, lex: &Lexicon, original: SurfaceChoice, rng: &mut R) -> Result<Self> {
        fn other<R: Rng + ?Sized>(n: usize, current: usize, rng: &mut R) -> usize {
            if n < 2 {
                return current;
            }
            let k = rng.gen_range(0..n - 1);
            if k >= current {
                k + 1
            } else {
                k
            }
        }
        Ok(Self {
            entity_a: other(lex.entity(&t.entity_a)?.surfaces.len(), original.entity_a, rng),
            entity_b: other(lex.entity(&t.entity_b)?.surfaces.len(), original.entity_b, rng),
            aspect: other(lex.aspect(&t.aspect)?.surfaces.len(), original.aspect, rng),
            opinion: other(lex.opinion(&t.opinion)?.surfaces.len(), original.opinion, rng),
        })
    }
}

fn surface<'a>(surfaces: &'a [String], idx: usize, id: &str) -> Result<&'a str> {
    surfaces.get(idx).map(String::as_str).ok_or_else(|| ColoError::Lexicon(format!("{id} has no surface #{idx}")))
}

/// `[EA] <surface> [EB] <surface> [ASP] <surface> [OPN] <surface>`.
pub fn serialize_tuple(t: &ClrTuple, lex: &Lexicon, choice: SurfaceChoice) -> Result<Vec<String>> {
    let parts = [
        (EA_TAG, surface(&lex.entity(&t.entity_a)?.surfaces, choice.entity_a, &t.entity_a)?),
        (EB_TAG, surface(&lex.entity(&t.entity_b)?.surfaces, choice.entity_b, &t.entity_b)?),
        (ASP_TAG, surface(&lex.aspect(&t.aspect)?.surfaces, choice.aspect, &t.aspect)?),
        (OPN_TAG, surface(&lex.opinion(&t.opinion)?.surfaces, choice.opinion, &t.opinion)?),
    ];
    let mut out = Vec::new();
    for (tag, s) in parts {
        out.push(RESERVED[tag].to_string());
        out.extend(s.split_whitespace().map(str::to_string));
    }
    Ok(out)
}

/// Recovers the tuple ids from a serialization (attribute tail ignored).
pub fn parse_serialized<S: AsRef<str>>(tokens: &[S], lex: &Lexicon) -> Result<ClrTuple> {
    let mut fields: [Option<String>; 4] = Default::default();
    let mut current: Option<usize> = None;
    let mut buf: Vec<&str> = Vec::new();
    let flush = |slot: Option<usize>, buf: &mut Vec<&str>, fields: &mut [Option<String>; 4]| {
        if let Some(s) = slot {
            fields[s] = Some(buf.join(" "));
        }
        buf.clear();
    };
    for tok in tokens.iter().map(AsRef::as_ref) {
        let tag = match tok {
            "[EA]" => Some(0),
            "[EB]" => Some(1),
            "[ASP]" => Some(2),
            "[OPN]" => Some(3),
            _ => None,
        };
        if tag.is_some() || tok == ATTR_TAG {
            flush(current, &mut buf, &mut fields);
            current = tag;
            if tok == ATTR_TAG {
                break;
            }
        } else if current.is_some() {
            buf.push(tok);
        }
    }
    flush(current, &mut buf, &mut fields);
    let missing = || ColoError::Lexicon("serialization lacks a field tag".into());
    let [ea, eb, asp, opn] = fields;
    let (ea, eb, asp, opn) = (ea.ok_or_else(missing)?, eb.ok_or_else(missing)?, asp.ok_or_else(missing)?, opn.ok_or_else(missing)?);
    Ok(ClrTuple {
        entity_a: find_id(lex.entities.iter().map(|e| (&e.id, &e.surfaces)), &ea)?,
        entity_b: find_id(lex.entities.iter().map(|e| (&e.id, &e.surfaces)), &eb)?,
        aspect: find_id(lex.aspects.iter().map(|e| (&e.id, &e.surfaces)), &asp)?,
        opinion: find_id(lex.opinions.iter().map(|e| (&e.id, &e.surfaces)), &opn)?,
    })
}

fn find_id<'a>(mut items: impl Iterator<Item = (&'a String, &'a Vec<String>)>, s: &str) -> Result<String> {
    items.find(|(_, surfaces)| surfaces.iter().any(|x| x == s)).map(|(id, _)| id.clone()).ok_or_else(|| ColoError::Lexicon(format!("unknown surface {s:?}")))
}

/// Model input: the tuple serialization followed by `[ATTR] <attributes>`
/// for each profile, truncated to `max_len` tokens.
pub fn source_tokens(t: &ClrTuple, profiles: &[EntityProfile; 2], lex: &Lexicon, choice: SurfaceChoice, max_len: usize) -> Result<Vec<String>> {
    let mut out = serialize_tuple(t, lex, choice)?;
    for p in profiles {
        out.push(ATTR_TAG.to_string());
        for values in p.attributes.values() {
            out.extend(values.iter().cloned());
        }
    }
    out.truncate(max_len);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_lexicon, CorpusConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lex() -> Lexicon {
        build_lexicon(&CorpusConfig::default()).unwrap()
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocab::build(&lex());
        assert_eq!(v.id("<pad>"), 0);
        assert_eq!(v.id("<bos>"), 1);
        assert_eq!(v.id("<eos>"), 2);
        assert_eq!(v.id("<unk>"), 3);
        assert_eq!(v.id("[EA]"), 4);
        assert_eq!(v.id("[OPN]"), 7);
    }

    #[test]
    fn out_of_vocabulary_is_unk() {
        let v = Vocab::build(&lex());
        assert_eq!(v.tokenize(&["definitely-not-a-word"]), vec![UNK]);
    }

    #[test]
    fn vocabulary_round_trips() {
        let v = Vocab::build(&lex());
        for (i, w) in v.tokens().iter().enumerate() {
            assert_eq!(v.tokenize(&[w]), vec![i]);
            assert_eq!(v.detokenize(&[i]), vec![w.clone()]);
        }
    }

    #[test]
    fn serialization_round_trip_and_swap() {
        let l = lex();
        let t = ClrTuple::new("ENT_003", "ENT_011", "ASP_02", "NEG_01");
        let s = serialize_tuple(&t, &l, SurfaceChoice::default()).unwrap();
        assert_eq!(s, ["[EA]", "ENT_003", "[EB]", "ENT_011", "[ASP]", "ASP_02", "[OPN]", "NEG_01"]);
        assert_eq!(parse_serialized(&s, &l).unwrap(), t);

        let swapped = ClrTuple::new("ENT_011", "ENT_003", "ASP_02", "NEG_01");
        let s2 = serialize_tuple(&swapped, &l, SurfaceChoice::default()).unwrap();
        let differing: Vec<usize> = (0..s.len()).filter(|&i| s[i] != s2[i]).collect();
        assert_eq!(differing, vec![1, 3]);
    }

    #[test]
    fn alternative_surfaces_differ_when_possible() {
        let l = lex();
        let t = ClrTuple::new("ENT_003", "ENT_011", "ASP_02", "NEG_01");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let alt = SurfaceChoice::alternative(&t, &l, SurfaceChoice::default(), &mut rng).unwrap();
            assert!(alt.entity_a != 0 && alt.entity_b != 0 && alt.aspect != 0 && alt.opinion != 0);
            let s = serialize_tuple(&t, &l, alt).unwrap();
            assert_eq!(parse_serialized(&s, &l).unwrap(), t);
        }
    }

    #[test]
    fn unknown_id_is_a_lexicon_error() {
        let t = ClrTuple::new("ENT_999", "ENT_011", "ASP_02", "NEG_01");
        assert!(matches!(serialize_tuple(&t, &lex(), SurfaceChoice::default()), Err(ColoError::Lexicon(_))));
    }
}
