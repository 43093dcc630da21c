//! Contrastive samples (one positive, three perturbation negatives), the
//! rank-based margin schedule, the pairwise hinge loss and the combined
//! training objective.

mod loss;

pub use loss::{encoder_similarity, total_loss, ContrastiveInputs, LossBreakdown, LossConfig, PassCount};

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClrTuple, Lexicon, SurfaceChoice};
use crate::error::{ColoError, Result};
use crate::tensor::{Real, Tape, Var};

/// Negative sample types, in their fixed ranking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegKind {
    /// Entity swap.
    Es,
    /// Aspect substitution.
    As,
    /// Opinion substitution.
    Os,
}

impl NegKind {
    pub const ALL: [NegKind; 3] = [NegKind::Es, NegKind::As, NegKind::Os];

    pub fn name(self) -> &'static str {
        match self {
            NegKind::Es => "es",
            NegKind::As => "as",
            NegKind::Os => "os",
        }
    }
}

impl fmt::Display for NegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveSet {
    pub original: ClrTuple,
    /// Same ids as `original`, realized with `positive_surfaces`.
    pub positive: ClrTuple,
    pub positive_surfaces: SurfaceChoice,
    pub neg_es: ClrTuple,
    pub neg_as: ClrTuple,
    pub neg_os: ClrTuple,
}

impl ContrastiveSet {
    pub fn negative(&self, kind: NegKind) -> &ClrTuple {
        match kind {
            NegKind::Es => &self.neg_es,
            NegKind::As => &self.neg_as,
            NegKind::Os => &self.neg_os,
        }
    }

    /// Structural invariants of the set (see the operation docs).
    pub fn validate(&self, lex: &Lexicon) -> Result<()> {
        let o = &self.original;
        let bad = |m: &str| Err(ColoError::InfeasibleNegative(m.to_string()));
        if self.positive != *o {
            return bad("positive changes ids");
        }
        if self.neg_es != swap_entities(o) {
            return bad("entity swap is not the swapped original");
        }
        let a = &self.neg_as;
        if a.entity_a != o.entity_a || a.entity_b != o.entity_b || a.opinion != o.opinion || a.aspect == o.aspect {
            return bad("aspect substitute must change exactly the aspect");
        }
        let n = &self.neg_os;
        if n.entity_a != o.entity_a || n.entity_b != o.entity_b || n.aspect != o.aspect || n.opinion == o.opinion {
            return bad("opinion substitute must change exactly the opinion");
        }
        if let Some(ant) = lex.antonym(&o.opinion)? {
            if n.opinion != ant {
                return bad("opinion substitute ignores an available antonym");
            }
        }
        for t in [a, n] {
            lex.check_tuple(t)?;
        }
        Ok(())
    }
}

/// A surface choice that differs from the canonical one in every component
/// with aliases.
pub fn make_positive<R: Rng + ?Sized>(t: &ClrTuple, lex: &Lexicon, rng: &mut R) -> Result<SurfaceChoice> {
    SurfaceChoice::alternative(t, lex, SurfaceChoice::default(), rng)
}

pub fn swap_entities(t: &ClrTuple) -> ClrTuple {
    ClrTuple { entity_a: t.entity_b.clone(), entity_b: t.entity_a.clone(), aspect: t.aspect.clone(), opinion: t.opinion.clone() }
}

pub fn substitute_aspect<R: Rng + ?Sized>(t: &ClrTuple, lex: &Lexicon, rng: &mut R) -> Result<ClrTuple> {
    let others: Vec<&String> = lex.aspects.iter().map(|a| &a.id).filter(|id| **id != t.aspect).collect();
    let pick = others.choose(rng).ok_or_else(|| ColoError::InfeasibleNegative(format!("no aspect other than {}", t.aspect)))?;
    Ok(ClrTuple { aspect: (*pick).clone(), ..t.clone() })
}

/// The antonym when the lexicon has one, otherwise a uniformly drawn
/// different opinion.
pub fn substitute_opinion<R: Rng + ?Sized>(t: &ClrTuple, lex: &Lexicon, rng: &mut R) -> Result<ClrTuple> {
    if let Some(ant) = lex.antonym(&t.opinion)? {
        return Ok(ClrTuple { opinion: ant.to_string(), ..t.clone() });
    }
    let others: Vec<&String> = lex.opinions.iter().map(|o| &o.id).filter(|id| **id != t.opinion).collect();
    let pick = others.choose(rng).ok_or_else(|| ColoError::InfeasibleNegative(format!("no opinion other than {}", t.opinion)))?;
    Ok(ClrTuple { opinion: (*pick).clone(), ..t.clone() })
}

pub fn build_contrastive_set<R: Rng + ?Sized>(t: &ClrTuple, lex: &Lexicon, rng: &mut R) -> Result<ContrastiveSet> {
    lex.check_tuple(t)?;
    let positive_surfaces = make_positive(t, lex, rng)?;
    let neg_as = substitute_aspect(t, lex, rng)?;
    let neg_os = substitute_opinion(t, lex, rng)?;
    Ok(ContrastiveSet { original: t.clone(), positive: t.clone(), positive_surfaces, neg_es: swap_entities(t), neg_as, neg_os })
}

/// 1-based ranks in descending order of value; equal values keep their
/// positional order.
pub fn rank_descending(values: &[f64]) -> Result<Vec<usize>> {
    if values.is_empty() {
        return Err(ColoError::InvalidLoss("no values to rank".into()));
    }
    if let Some(v) = values.iter().find(|v| v.is_nan()) {
        return Err(ColoError::InvalidLoss(format!("cannot rank {v}")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps earlier positions first among ties.
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let mut ranks = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    Ok(ranks)
}

/// Per-negative hinge margins `gamma * rank`, ranked over the given
/// negatives in order.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginSchedule {
    pub gamma: f64,
    pub margins: Vec<(NegKind, f64)>,
}

impl MarginSchedule {
    pub fn margin(&self, kind: NegKind) -> Option<f64> {
        self.margins.iter().find(|(k, _)| *k == kind).map(|&(_, m)| m)
    }
}

/// Negatives whose LM loss is smallest (the reference is still easy to
/// produce from them) get the largest margin.
pub fn margin_schedule(gamma: f64, lm_losses: &[(NegKind, f64)]) -> Result<MarginSchedule> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(ColoError::Config(format!("gamma must be positive, got {gamma}")));
    }
    let values: Vec<f64> = lm_losses.iter().map(|&(_, l)| l).collect();
    let ranks = rank_descending(&values)?;
    let margins = lm_losses.iter().zip(ranks).map(|(&(k, _), r)| (k, gamma * r as f64)).collect();
    Ok(MarginSchedule { gamma, margins })
}

/// `sum_{p+} sum_{p-} max(0, p- - p+ + margin(p-))`, differentiable through
/// the similarities.
pub fn hinge_margin_loss<F: Real>(tape: &mut Tape<F>, p_plus: &[Var], p_minus: &[(Var, f64)]) -> Result<Var> {
    if p_plus.is_empty() || p_minus.is_empty() {
        return Err(ColoError::Dimension { op: "hinge_margin_loss", detail: "similarity sets must be non-empty".into() });
    }
    let mut terms = Vec::with_capacity(p_plus.len() * p_minus.len());
    for &pp in p_plus {
        for &(pm, margin) in p_minus {
            let diff = tape.sub(pm, pp)?;
            let shifted = tape.add_scalar(diff, F::of(margin))?;
            terms.push(tape.relu(shifted)?);
        }
    }
    tape.add_all(&terms)
}
