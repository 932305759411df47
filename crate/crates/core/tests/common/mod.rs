//! Independent reference implementations for the acceptance suite.
//!
//! Everything here is deliberately written from the definitions rather than
//! by calling back into the library: F1 uses the `2*overlap / (|pred| +
//! |gold|)` form instead of the precision/recall form, the reward
//! evaluators are literal numerator/denominator loops, and the group
//! normalizer is the plain scalar-reward z-score with no notion of scopes
//! or channel sets.

#![allow(dead_code)]

use scoperl::ChannelScores;
use scoperl::vocab::{INSUFFICIENT_TO_ANSWER, NO_RELEVANT_INFO};

/// Token-bag F1 via the harmonic identity 2*overlap / (|pred| + |gold|).
/// Algebraically equal to 2PR/(P+R) but computed along a different path.
pub fn naive_f1(pred: &[u32], gold: &[u32]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut p = pred.to_vec();
    let mut g = gold.to_vec();
    p.sort_unstable();
    g.sort_unstable();
    let (mut i, mut j, mut overlap) = (0usize, 0usize, 0usize);
    while i < p.len() && j < g.len() {
        if p[i] == g[j] {
            overlap += 1;
            i += 1;
            j += 1;
        } else if p[i] < g[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    2.0 * overlap as f64 / (p.len() + g.len()) as f64
}

/// Brute-force weighted per-document perception score. `docs[i]` is
/// (predicted evidence, gold evidence); empty gold marks the document
/// irrelevant.
pub fn naive_perception(docs: &[(Vec<u32>, Vec<u32>)], k_pos: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (pred, gold) in docs {
        if gold.is_empty() {
            den += 1.0;
            if pred.len() == 1 && pred[0] == NO_RELEVANT_INFO {
                num += 1.0;
            }
        } else {
            den += k_pos;
            num += k_pos * naive_f1(pred, gold);
        }
    }
    num / den
}

/// Brute-force answer score with insufficiency substitution.
pub fn naive_derivation(pred: &[u32], gold: &[u32], sufficient: bool) -> f64 {
    if sufficient {
        naive_f1(pred, gold)
    } else {
        naive_f1(pred, &[INSUFFICIENT_TO_ANSWER])
    }
}

pub fn naive_format(well_formed: bool) -> f64 {
    if well_formed {
        1.0
    } else {
        0.0
    }
}

/// Unweighted mean of the three channels — the scalar reward a scope-blind
/// GRPO sees.
pub fn mean3(s: &ChannelScores) -> f64 {
    (s.perception + s.derivation + s.format) / 3.0
}

/// Textbook group normalization: z-score the G scalar rewards with
/// population statistics, zeros when the spread vanishes, and broadcast
/// rollout i's z to each of its `lens[i]` tokens.
pub fn textbook_grpo(rewards: &[f64], lens: &[usize]) -> Vec<Vec<f64>> {
    let z = zscore(rewards);
    lens.iter()
        .zip(&z)
        .map(|(&len, &zi)| vec![zi; len])
        .collect()
}

/// Population z-score; all zeros below the degeneracy threshold.
pub fn zscore(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}
