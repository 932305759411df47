//! Held-out evaluation of a decoding policy.
//!
//! An episode's *context class* - sufficient or insufficient - is judged
//! from (query, documents) by the same chain classifier the policy context
//! uses, so evaluation never trusts generator labels it could not recompute.
//! The decoded trajectory is parsed, its answer span read as a token
//! multiset, and scored three ways: exact bag match against the effective
//! gold (the gold answer, or the abstention token when the context is
//! insufficient), token-bag F1 against the same, and whether the answer was
//! exactly the abstention token. Malformed decodes count as incorrect
//! non-abstentions with zero F1.
//!
//! The per-class breakdown splits each class into correct generation,
//! incorrect generation, and abstention; each class's three fractions sum to
//! one, and overall accuracy equals the count-weighted mean of per-class
//! correctness (correct generation for sufficient contexts, abstention for
//! insufficient ones).

use serde::{Deserialize, Serialize};

use crate::context::{ContextTracker, EpisodeClass};
use crate::env::Episode;
use crate::grammar::{parse, Grammar};
use crate::policy::{greedy_decode, PolicyParams};
use crate::reward::token_bag_f1;
use crate::vocab::{Vocabulary, INSUFFICIENT_TO_ANSWER};

/// Outcome fractions for one context class. `n` is the class count; the
/// three fractions are relative to `n` and sum to one (all zero when the
/// class is empty).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub n: usize,
    pub correct_generation: f64,
    pub incorrect_generation: f64,
    pub abstention: f64,
}

impl ClassStats {
    /// `generated` counts correct non-abstention answers, so the three
    /// buckets partition the class: abstentions, correct generations, and
    /// everything else.
    fn from_counts(n: usize, generated: usize, abstained: usize) -> ClassStats {
        if n == 0 {
            return ClassStats {
                n,
                correct_generation: 0.0,
                incorrect_generation: 0.0,
                abstention: 0.0,
            };
        }
        debug_assert!(generated + abstained <= n);
        let nf = n as f64;
        ClassStats {
            n,
            correct_generation: generated as f64 / nf,
            incorrect_generation: (n - generated - abstained) as f64 / nf,
            abstention: abstained as f64 / nf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n: usize,
    /// Exact bag-match rate against the effective gold.
    pub accuracy: f64,
    /// Mean token-bag F1 against the effective gold.
    pub f1: f64,
    /// Rate of answers that are exactly the abstention token.
    pub abstention_rate: f64,
    pub sufficient: ClassStats,
    pub insufficient: ClassStats,
}

/// One audited episode, written to the evaluation audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub index: usize,
    /// Context class judged from (query, documents).
    pub context_sufficient: bool,
    pub well_formed: bool,
    /// Decoded answer span (empty when malformed).
    pub answer: Vec<u32>,
    pub f1: f64,
    pub correct: bool,
    pub abstained: bool,
}

fn multiset_eq(a: &[u32], b: &[u32]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

/// Evaluate an arbitrary decoder: `decode(index, episode)` returns the full
/// trajectory tokens, parsed under `grammar_of(episode)`.
pub fn evaluate_with<D, G>(
    episodes: &[Episode],
    vocab: &Vocabulary,
    grammar_of: G,
    mut decode: D,
) -> (EvalResult, Vec<EpisodeOutcome>)
where
    D: FnMut(usize, &Episode) -> Vec<u32>,
    G: Fn(&Episode) -> Grammar,
{
    let abstain = [INSUFFICIENT_TO_ANSWER];
    let mut outcomes = Vec::with_capacity(episodes.len());
    let (mut n_suf, mut generated_suf, mut abstained_suf) = (0usize, 0usize, 0usize);
    let (mut n_ins, mut generated_ins, mut abstained_ins) = (0usize, 0usize, 0usize);
    let mut correct_total = 0usize;
    let mut f1_sum = 0.0;
    for (index, episode) in episodes.iter().enumerate() {
        let grammar = grammar_of(episode);
        let context_sufficient =
            ContextTracker::new(episode, vocab, grammar).class() != EpisodeClass::Insufficient;
        let tokens = decode(index, episode);
        let trajectory = parse(&tokens, vocab, grammar);
        let answer: Vec<u32> = trajectory.answer_content().unwrap_or(&[]).to_vec();
        let effective_gold: &[u32] = if context_sufficient {
            &episode.gold_answer
        } else {
            &abstain
        };
        let f1 = token_bag_f1(&answer, effective_gold);
        let correct = !answer.is_empty() && multiset_eq(&answer, effective_gold);
        let abstained = answer == [INSUFFICIENT_TO_ANSWER];
        correct_total += correct as usize;
        // Abstention and correct generation are disjoint buckets: on
        // insufficient contexts the correct answer *is* the abstention.
        let generated = (correct && !abstained) as usize;
        if context_sufficient {
            n_suf += 1;
            generated_suf += generated;
            abstained_suf += abstained as usize;
        } else {
            n_ins += 1;
            generated_ins += generated;
            abstained_ins += abstained as usize;
        }
        f1_sum += f1;
        outcomes.push(EpisodeOutcome {
            index,
            context_sufficient,
            well_formed: trajectory.well_formed,
            answer,
            f1,
            correct,
            abstained,
        });
    }
    let n = episodes.len();
    let result = EvalResult {
        n,
        accuracy: correct_total as f64 / n.max(1) as f64,
        f1: f1_sum / n.max(1) as f64,
        abstention_rate: (abstained_suf + abstained_ins) as f64 / n.max(1) as f64,
        sufficient: ClassStats::from_counts(n_suf, generated_suf, abstained_suf),
        insufficient: ClassStats::from_counts(n_ins, generated_ins, abstained_ins),
    };
    (result, outcomes)
}

/// Greedy-decode evaluation of a policy.
pub fn evaluate(
    params: &PolicyParams,
    episodes: &[Episode],
    grammar_of: impl Fn(&Episode) -> Grammar,
) -> (EvalResult, Vec<EpisodeOutcome>) {
    let vocab = params
        .config
        .validate()
        .expect("config validated at construction");
    evaluate_with(episodes, &vocab, &grammar_of, |_, e| {
        greedy_decode(params, e, grammar_of(e))
    })
}
