//! Reference-based and diversity metrics over token sequences.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::error::{ColoError, Result};

fn aligned<A, B>(candidates: &[A], references: &[B]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(ColoError::Alignment { candidates: candidates.len(), references: references.len() });
    }
    Ok(())
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total, summed over the corpus.
pub fn modified_precision_counts<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<(usize, usize)> {
    aligned(candidates, references)?;
    let (mut matched, mut total) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        let rc = ngram_counts(r, n);
        for (g, k) in ngram_counts(c, n) {
            matched += k.min(rc.get(g).copied().unwrap_or(0));
            total += k;
        }
    }
    Ok((matched, total))
}

/// Corpus BLEU with uniform weights over orders `1..=max_n` and a brevity
/// penalty. When any order `n >= 2` has no match, every order `n >= 2` is
/// smoothed with +1 on numerator and denominator.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<f64> {
    aligned(candidates, references)?;
    if max_n == 0 {
        return Err(ColoError::Config("BLEU order must be at least 1".into()));
    }
    let counts = (1..=max_n).map(|n| modified_precision_counts(candidates, references, n)).collect::<Result<Vec<_>>>()?;
    if counts[0].0 == 0 {
        return Ok(0.0);
    }
    let smooth = counts[1..].iter().any(|&(m, _)| m == 0);
    let mut log_sum = 0.0;
    for (i, &(m, t)) in counts.iter().enumerate() {
        let (m, t) = if i > 0 && smooth { (m + 1, t + 1) } else { (m, t) };
        log_sum += (m as f64 / t as f64).ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / max_n as f64).exp())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure of one pair.
pub fn rouge_l_pair<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean per-example ROUGE-L F-measure.
pub fn rouge_l<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    aligned(candidates, references)?;
    if candidates.is_empty() {
        return Ok(0.0);
    }
    Ok(candidates.iter().zip(references).map(|(c, r)| rouge_l_pair(c, r)).sum::<f64>() / candidates.len() as f64)
}

/// Unique n-grams over total n-grams across all candidates.
pub fn distinct_n<T: Eq + Hash>(candidates: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(ColoError::Config("distinct-n needs n >= 1".into()));
    }
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for c in candidates.iter().filter(|c| c.len() >= n) {
        for w in c.windows(n) {
            unique.insert(w);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { unique.len() as f64 / total as f64 })
}
