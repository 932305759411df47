//! Three scalar reward channels over a scored rollout.
//!
//! Perception scores per-document evidence extraction with asymmetric
//! weighting: a relevant document contributes k_pos * F1(pred, gold), an
//! irrelevant one contributes 1 exactly when the model outputs the single
//! abstention token, and the total is normalized by the maximum attainable
//! sum k_pos * n_rel + n_irr:
//!
//! ```text
//! R_perc = sum_i r_i / sum_i (y_i * k_pos + (1 - y_i))
//! r_i    = k_pos * f1(pred_i, gold_i)      if y_i = 1
//!          [pred_i == {no-relevant-info}]  if y_i = 0
//! ```
//!
//! Derivation is token-bag F1 of the answer against the effective gold,
//! which is the reserved "insufficient to answer" token when the context
//! cannot support an answer. Format is binary well-formedness. A malformed
//! trajectory zeroes all three channels.

use serde::{Deserialize, Serialize};

use crate::env::Episode;
use crate::error::{Error, Result};
use crate::grammar::TaggedTrajectory;
use crate::vocab::{INSUFFICIENT_TO_ANSWER, NO_RELEVANT_INFO};

/// Predicted vs gold evidence for one document. Empty gold means the document
/// is irrelevant (y = 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceRecord {
    pub predicted: Vec<u32>,
    pub gold: Vec<u32>,
}

impl EvidenceRecord {
    pub fn relevant(&self) -> bool {
        !self.gold.is_empty()
    }
}

/// Predicted vs gold answer. When `sufficient` is false the effective gold is
/// the reserved abstention token regardless of `gold`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerRecord {
    pub predicted: Vec<u32>,
    pub gold: Vec<u32>,
    pub sufficient: bool,
}

/// The three channel values for one rollout. Invariant: perception and
/// derivation are zero whenever format is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScores {
    pub perception: f64,
    pub derivation: f64,
    pub format: f64,
}

impl ChannelScores {
    pub const ZERO: ChannelScores = ChannelScores {
        perception: 0.0,
        derivation: 0.0,
        format: 0.0,
    };

    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Perception => self.perception,
            Channel::Derivation => self.derivation,
            Channel::Format => self.format,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Perception,
    Derivation,
    Format,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Perception, Channel::Derivation, Channel::Format];
}

/// Multiset-overlap F1 over token bags. Both empty scores 1, exactly one
/// empty scores 0.
pub fn token_bag_f1(pred: &[u32], gold: &[u32]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::HashMap::with_capacity(gold.len());
    for &g in gold {
        *counts.entry(g).or_insert(0i64) += 1;
    }
    let mut overlap = 0i64;
    for &p in pred {
        if let Some(c) = counts.get_mut(&p) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Asymmetrically weighted perception reward over all documents.
///
/// # Errors
/// Fails on an empty record list; the ratio is undefined.
pub fn perception_reward(records: &[EvidenceRecord], k_pos: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut earned = 0.0;
    let mut attainable = 0.0;
    for rec in records {
        if rec.relevant() {
            earned += k_pos * token_bag_f1(&rec.predicted, &rec.gold);
            attainable += k_pos;
        } else {
            // Exact abstention: the single reserved token, nothing else.
            if rec.predicted == [NO_RELEVANT_INFO] {
                earned += 1.0;
            }
            attainable += 1.0;
        }
    }
    Ok(earned / attainable)
}

/// Answer F1 against the effective gold bag.
pub fn derivation_reward(record: &AnswerRecord) -> f64 {
    let abstain = [INSUFFICIENT_TO_ANSWER];
    let gold: &[u32] = if record.sufficient {
        &record.gold
    } else {
        &abstain
    };
    token_bag_f1(&record.predicted, gold)
}

/// Binary structural adherence.
pub fn format_reward(trajectory: &TaggedTrajectory) -> f64 {
    if trajectory.well_formed {
        1.0
    } else {
        0.0
    }
}

/// Score one rollout against its episode. Malformed trajectories score zero
/// on every channel. Think-answer trajectories (and k = 0 episodes) have no
/// evidence records; their perception channel is inert zero.
pub fn score_rollout(trajectory: &TaggedTrajectory, episode: &Episode, k_pos: f64) -> ChannelScores {
    if !trajectory.well_formed {
        return ChannelScores::ZERO;
    }
    let perception = if trajectory.evidence_blocks() == 0 {
        0.0
    } else {
        let records: Vec<EvidenceRecord> = (0..episode.k())
            .map(|i| EvidenceRecord {
                predicted: trajectory
                    .evidence_content(i + 1)
                    .unwrap_or(&[])
                    .to_vec(),
                gold: episode.gold_evidence[i].clone(),
            })
            .collect();
        perception_reward(&records, k_pos).expect("k >= 1 yields records")
    };
    let answer = AnswerRecord {
        predicted: trajectory.answer_content().unwrap_or(&[]).to_vec(),
        gold: episode.gold_answer.clone(),
        sufficient: episode.sufficient,
    };
    ChannelScores {
        perception,
        derivation: derivation_reward(&answer),
        format: 1.0,
    }
}
