//! Component coverage and the exact grammar-based entailment check.

use std::collections::HashMap;

use crate::corpus::grammar::{Slot, Template, COMPARATIVE_TEMPLATES};
use crate::corpus::{ClrTuple, Lexicon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Kind {
    Entity,
    Aspect,
    Opinion,
}

/// `(id, surface tokens)` candidates keyed by their first token.
type ByFirst = HashMap<String, Vec<(String, Vec<String>)>>;

/// Surface forms of every lexicon id, keyed by first token.
#[derive(Debug, Clone)]
pub struct SurfaceIndex {
    by_first: HashMap<Kind, ByFirst>,
    antonyms: HashMap<String, Option<String>>,
    templates: Vec<Template>,
}

/// One template instantiation found in a candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub template: usize,
    pub start: usize,
    pub winner: String,
    pub loser: String,
    pub aspect: String,
    /// Opinion about the winner, after mapping an antonym slot back.
    pub opinion: Option<String>,
    /// Repeated slots agree and every antonym slot has a counterpart.
    pub consistent: bool,
}

impl Extraction {
    pub fn matches(&self, t: &ClrTuple) -> bool {
        self.consistent
            && self.winner == t.entity_a
            && self.loser == t.entity_b
            && self.aspect == t.aspect
            && self.opinion.as_deref() == Some(t.opinion.as_str())
    }
}

#[derive(Debug, Clone, Default)]
struct Bindings {
    winner: Vec<String>,
    loser: Vec<String>,
    aspect: Vec<String>,
    opinion: Vec<String>,
    antonym: Vec<String>,
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

impl SurfaceIndex {
    pub fn new(lex: &Lexicon) -> Self {
        let mut by_first: HashMap<Kind, ByFirst> = HashMap::new();
        let mut add = |kind, id: &str, surfaces: &[String]| {
            for s in surfaces {
                let toks: Vec<String> = s.split_whitespace().map(str::to_string).collect();
                if let Some(first) = toks.first() {
                    by_first.entry(kind).or_default().entry(first.clone()).or_default().push((id.to_string(), toks));
                }
            }
        };
        lex.entities.iter().for_each(|e| add(Kind::Entity, &e.id, &e.surfaces));
        lex.aspects.iter().for_each(|a| add(Kind::Aspect, &a.id, &a.surfaces));
        lex.opinions.iter().for_each(|o| add(Kind::Opinion, &o.id, &o.surfaces));
        let antonyms = lex.opinions.iter().map(|o| (o.id.clone(), o.antonym.clone())).collect();
        let templates = COMPARATIVE_TEMPLATES.iter().map(|p| Template::parse(p)).collect();
        Self { by_first, antonyms, templates }
    }

    fn surfaces_at(&self, kind: Kind, tokens: &[String], pos: usize) -> Vec<(&str, usize)> {
        let rest = tokens.get(pos..).unwrap_or_default();
        let hits = rest.first().and_then(|t| self.by_first.get(&kind)?.get(t.as_str()));
        hits.into_iter().flatten().filter(|(_, s)| rest.starts_with(s)).map(|(id, s)| (id.as_str(), s.len())).collect()
    }

    fn match_slots(&self, slots: &[Slot], tokens: &[String], pos: usize, b: &mut Bindings, out: &mut Vec<Bindings>) {
        let Some((slot, rest)) = slots.split_first() else {
            out.push(b.clone());
            return;
        };
        let (kind, field): (Kind, fn(&mut Bindings) -> &mut Vec<String>) = match *slot {
            Slot::Word(w) => {
                if tokens.get(pos).map(String::as_str) == Some(w) {
                    self.match_slots(rest, tokens, pos + 1, b, out);
                }
                return;
            }
            Slot::Winner => (Kind::Entity, |b| &mut b.winner),
            Slot::Loser => (Kind::Entity, |b| &mut b.loser),
            Slot::Aspect => (Kind::Aspect, |b| &mut b.aspect),
            Slot::Opinion => (Kind::Opinion, |b| &mut b.opinion),
            Slot::Antonym => (Kind::Opinion, |b| &mut b.antonym),
            Slot::Entity | Slot::Attribute(_) => return,
        };
        for (id, len) in self.surfaces_at(kind, tokens, pos) {
            field(b).push(id.to_string());
            self.match_slots(rest, tokens, pos + len, b, out);
            field(b).pop();
        }
    }

    fn resolve(&self, template: usize, start: usize, b: Bindings) -> Extraction {
        fn single(v: &[String]) -> (String, bool) {
            let first = v.first().cloned().unwrap_or_default();
            let same = v.iter().all(|x| *x == first);
            (first, same && !v.is_empty())
        }
        let (winner, w_ok) = single(&b.winner);
        let (loser, l_ok) = single(&b.loser);
        let (aspect, a_ok) = single(&b.aspect);
        let mut opinions = b.opinion.clone();
        let mut ant_ok = true;
        for n in &b.antonym {
            match self.antonyms.get(n).cloned().flatten() {
                Some(o) => opinions.push(o),
                None => ant_ok = false,
            }
        }
        let (opinion, o_ok) = single(&opinions);
        Extraction { template, start, winner, loser, aspect, opinion: o_ok.then_some(opinion), consistent: w_ok && l_ok && a_ok && o_ok && ant_ok }
    }

    /// Every comparative-template instantiation in `tokens`.
    pub fn extract<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Extraction> {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let mut found = Vec::new();
        for start in 0..tokens.len() {
            for (ti, tpl) in self.templates.iter().enumerate() {
                let mut out = Vec::new();
                self.match_slots(&tpl.slots, &tokens, start, &mut Bindings::default(), &mut out);
                found.extend(out.into_iter().map(|b| self.resolve(ti, start, b)));
            }
        }
        found
    }

    /// 1 when at least one instantiation is found and all of them state the
    /// tuple's relation, else 0.
    pub fn entail<S: AsRef<str>>(&self, tokens: &[S], t: &ClrTuple) -> u8 {
        let ex = self.extract(tokens);
        u8::from(!ex.is_empty() && ex.iter().all(|e| e.matches(t)))
    }

    /// Fraction of the four tuple components with some surface form present
    /// as a contiguous run.
    pub fn coverage<S: AsRef<str>>(&self, tokens: &[S], t: &ClrTuple, lex: &Lexicon) -> f64 {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let present = |surfaces: Option<&Vec<String>>| {
            surfaces.is_some_and(|ss| ss.iter().any(|s| contains_run(&tokens, &s.split_whitespace().map(str::to_string).collect::<Vec<_>>())))
        };
        let hits = [
            present(lex.entity(&t.entity_a).ok().map(|e| &e.surfaces)),
            present(lex.entity(&t.entity_b).ok().map(|e| &e.surfaces)),
            present(lex.aspect(&t.aspect).ok().map(|a| &a.surfaces)),
            present(lex.opinion(&t.opinion).ok().map(|o| &o.surfaces)),
        ];
        hits.iter().filter(|&&h| h).count() as f64 / 4.0
    }
}

pub fn coverage<S: AsRef<str>>(candidate: &[S], t: &ClrTuple, lex: &Lexicon) -> f64 {
    SurfaceIndex::new(lex).coverage(candidate, t, lex)
}

pub fn entail_oracle<S: AsRef<str>>(candidate: &[S], t: &ClrTuple, lex: &Lexicon) -> u8 {
    SurfaceIndex::new(lex).entail(candidate, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_lexicon, CorpusConfig};

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn inverted_template_reads_winner_second() {
        let lex = build_lexicon(&CorpusConfig::default()).unwrap();
        let t = ClrTuple::new("ENT_001", "ENT_002", "ASP_03", "POS_00");
        let s = words("ENT_002 is worse than ENT_001 on ASP_03 ; ENT_002 feels NEG_00_ALT1 whereas ENT_001 feels POS_00 .");
        assert_eq!(entail_oracle(&s, &t, &lex), 1);
        let swapped = ClrTuple::new("ENT_002", "ENT_001", "ASP_03", "POS_00");
        assert_eq!(entail_oracle(&s, &swapped, &lex), 0);
    }

    #[test]
    fn mismatched_antonym_is_a_contradiction() {
        let lex = build_lexicon(&CorpusConfig::default()).unwrap();
        let t = ClrTuple::new("ENT_001", "ENT_002", "ASP_03", "POS_00");
        let s = words("ENT_002 is worse than ENT_001 on ASP_03 ; ENT_002 feels NEG_01 whereas ENT_001 feels POS_00 .");
        assert_eq!(entail_oracle(&s, &t, &lex), 0);
    }

    #[test]
    fn no_template_no_entailment() {
        let lex = build_lexicon(&CorpusConfig::default()).unwrap();
        let t = ClrTuple::new("ENT_001", "ENT_002", "ASP_03", "POS_00");
        assert_eq!(entail_oracle(&words("ENT_001 ENT_002 ASP_03 POS_00"), &t, &lex), 0);
        assert_eq!(coverage(&words("ENT_001 ENT_002 ASP_03 POS_00"), &t, &lex), 1.0);
        assert_eq!(coverage::<&str>(&[], &t, &lex), 0.0);
    }
}
