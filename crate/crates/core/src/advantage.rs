//! Scope-aware token advantages.
//!
//! Each token carries a ChannelSet determined by its scope: observe and
//! evidence tokens answer to {Perception, Format}, think and answer tokens to
//! {Derivation, Format}, and tag tokens (which belong to no span, as does
//! every token of a malformed rollout) to {Format} alone. A token's scalar
//! reward is the mean of its in-scope channel values.
//!
//! Advantages are z-scores across the G rollouts of a group, normalized per
//! ChannelSet class rather than per position: rollout lengths differ, so the
//! class a token belongs to - not its offset - decides which group statistic
//! normalizes it. Because a class value is a function of the rollout's
//! channel scores alone, it is defined for every rollout even when a rollout
//! has no token of that class; this is the coherent extension of positional
//! normalization to ragged groups. A strict positional mode (align by offset,
//! drop shorter rollouts from the statistic) is available behind a flag.
//!
//! Forcing every token into one class reproduces standard group-relative
//! advantages exactly: one class means one statistic, shared by all tokens of
//! a rollout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{ScopeId, TaggedTrajectory};
use crate::reward::{Channel, ChannelScores};

/// Spread below which a class is considered degenerate and its advantages
/// are zeroed instead of divided by noise.
pub const MIN_STD: f64 = 1e-8;

// ---------------------------------------------------------------------------
// ChannelSet
// ---------------------------------------------------------------------------

/// Non-empty subset of the three reward channels, packed into three bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelSet(u8);

impl ChannelSet {
    pub const PERCEPTION_FORMAT: ChannelSet = ChannelSet(0b101);
    pub const DERIVATION_FORMAT: ChannelSet = ChannelSet(0b110);
    pub const FORMAT_ONLY: ChannelSet = ChannelSet(0b100);
    pub const ALL: ChannelSet = ChannelSet(0b111);

    fn bit(channel: Channel) -> u8 {
        match channel {
            Channel::Perception => 0b001,
            Channel::Derivation => 0b010,
            Channel::Format => 0b100,
        }
    }

    pub fn from_channels(channels: &[Channel]) -> ChannelSet {
        ChannelSet(channels.iter().fold(0, |acc, &c| acc | Self::bit(c)))
    }

    pub fn contains(&self, channel: Channel) -> bool {
        self.0 & Self::bit(channel) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Channel> + '_ {
        Channel::ALL.into_iter().filter(|&c| self.contains(c))
    }

    /// Mean of the rollout's scores over this set's channels.
    pub fn mean_score(&self, scores: &ChannelScores) -> f64 {
        debug_assert!(!self.is_empty(), "token reward over an empty channel set");
        self.iter().map(|c| scores.get(c)).sum::<f64>() / self.len() as f64
    }
}

/// Default reward-scope mapping: which channels supervise a token in the
/// given scope. `None` is a tag token (or any token of a malformed rollout).
pub fn channel_set(scope: Option<ScopeId>) -> ChannelSet {
    match scope {
        Some(ScopeId::Observe) | Some(ScopeId::Evidence(_)) => ChannelSet::PERCEPTION_FORMAT,
        Some(ScopeId::Think) | Some(ScopeId::Answer) => ChannelSet::DERIVATION_FORMAT,
        None => ChannelSet::FORMAT_ONLY,
    }
}

/// How tokens acquire channel sets: the scope-dependent mapping above, or a
/// single forced set on every token (the standard-GRPO degenerations used by
/// the ablation modes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScopeMapping {
    Scoped,
    Uniform(ChannelSet),
}

impl ScopeMapping {
    pub fn map(&self, scope: Option<ScopeId>) -> ChannelSet {
        match self {
            ScopeMapping::Scoped => channel_set(scope),
            ScopeMapping::Uniform(set) => *set,
        }
    }
}

// ---------------------------------------------------------------------------
// Token rewards and group advantages
// ---------------------------------------------------------------------------

/// Per-token channel set and scalar reward (mean of in-scope channel values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRewardRow {
    pub channel_set: ChannelSet,
    pub reward: f64,
}

/// One row per token of the trajectory, tags included.
pub fn aggregate_token_rewards(
    trajectory: &TaggedTrajectory,
    scores: &ChannelScores,
    mapping: ScopeMapping,
) -> Vec<TokenRewardRow> {
    (0..trajectory.tokens.len())
        .map(|pos| {
            let set = mapping.map(trajectory.scope_of(pos));
            TokenRewardRow {
                channel_set: set,
                reward: set.mean_score(scores),
            }
        })
        .collect()
}

/// Normalization regime for [`group_advantages`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationMode {
    /// Group statistics per ChannelSet class (default).
    ScopeClass,
    /// Group statistics per token offset; rollouts shorter than an offset do
    /// not contribute to (or receive) that offset's statistic.
    Positional,
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < MIN_STD {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Group-normalized advantage for every token of every rollout.
///
/// `scores[i]` and `rows[i]` describe rollout i of the group. The returned
/// matrix is ragged with the same shape as `rows`. Population statistics;
/// a class (or position) with spread below [`MIN_STD`] yields zeros.
///
/// # Errors
/// Fewer than two rollouts cannot be normalized.
pub fn group_advantages(
    scores: &[ChannelScores],
    rows: &[Vec<TokenRewardRow>],
    mode: NormalizationMode,
) -> Result<Vec<Vec<f64>>> {
    if scores.len() < 2 {
        return Err(Error::GroupTooSmall { got: scores.len() });
    }
    assert_eq!(scores.len(), rows.len(), "one score set per rollout");
    match mode {
        NormalizationMode::ScopeClass => {
            // Classes present anywhere in the group, in first-seen order.
            let mut classes: Vec<ChannelSet> = Vec::new();
            for rollout in rows {
                for row in rollout {
                    if !classes.contains(&row.channel_set) {
                        classes.push(row.channel_set);
                    }
                }
            }
            let mut z_per_class = Vec::with_capacity(classes.len());
            for &class in &classes {
                let values: Vec<f64> = scores.iter().map(|s| class.mean_score(s)).collect();
                z_per_class.push(normalize(&values));
            }
            let class_index = |set: ChannelSet| {
                classes
                    .iter()
                    .position(|&c| c == set)
                    .expect("every row's class was collected")
            };
            Ok(rows
                .iter()
                .enumerate()
                .map(|(i, rollout)| {
                    rollout
                        .iter()
                        .map(|row| {
                            debug_assert!(
                                (row.reward - row.channel_set.mean_score(&scores[i])).abs()
                                    < 1e-12,
                                "row reward must equal its class value"
                            );
                            z_per_class[class_index(row.channel_set)][i]
                        })
                        .collect()
                })
                .collect())
        }
        NormalizationMode::Positional => {
            let max_len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
            let mut out: Vec<Vec<f64>> = rows.iter().map(|r| vec![0.0; r.len()]).collect();
            for pos in 0..max_len {
                let present: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].len() > pos).collect();
                let values: Vec<f64> = present.iter().map(|&i| rows[i][pos].reward).collect();
                let z = normalize(&values);
                for (slot, &i) in present.iter().enumerate() {
                    out[i][pos] = z[slot];
                }
            }
            Ok(out)
        }
    }
}
