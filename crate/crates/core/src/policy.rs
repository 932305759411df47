//! Linear-softmax token policy with exact analytic gradients.
//!
//! A context activates a small set of binary feature rows: one row per
//! sliding-window slot (the previous `window` generated tokens, pad beyond
//! the start), one row for the grammar phase, and at most one row for the
//! phase's live symbol lookup (see [`crate::context`]). Logits are the sum
//! of the active rows of a weight matrix plus a bias vector:
//!
//! ```text
//! logit(t) = bias[t] + sum over active rows r of theta[r][t]
//! p = softmax(logit / temperature)
//! ```
//!
//! Because features are binary, the log-likelihood gradient is exact and
//! cheap: d log p(x) / d theta[r][t] = 1[t = x] - p(t) on active rows (and
//! on the bias), zero elsewhere. Sampling may run at any temperature, but
//! stored log-probabilities - and therefore every importance ratio formed
//! from them - are always temperature-1.
//!
//! The feature set is rich enough to express the task's target behavior
//! exactly; [`reference_params`] writes down such weights by hand (phase
//! biases route tags and abstentions, lookup-block diagonals copy symbols),
//! which tests use as a decoding oracle and a capacity ceiling.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{ContextTracker, LookupBlock, Phase};
use crate::env::Episode;
use crate::error::{Error, Result};
use crate::grammar::Grammar;
use crate::vocab::Vocabulary;

// ---------------------------------------------------------------------------
// Configuration and layout
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub vocab_size: u32,
    /// Sliding-window length over previously generated tokens.
    pub window: usize,
    /// Hard cap on rollout length.
    pub max_len: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            vocab_size: 64,
            window: 8,
            max_len: 48,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<Vocabulary> {
        if self.window == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "window and max_len must be positive".into(),
            ));
        }
        Vocabulary::new(self.vocab_size)
    }
}

/// Row indexing for the feature matrix. Symbol-indexed blocks are `V + 1`
/// rows wide: one row per vocabulary id plus a pad row for "empty".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    vocab: usize,
    window: usize,
}

impl FeatureLayout {
    pub fn new(config: &PolicyConfig) -> FeatureLayout {
        FeatureLayout {
            vocab: config.vocab_size as usize,
            window: config.window,
        }
    }

    fn width(&self) -> usize {
        self.vocab + 1
    }

    /// Symbol-block row offset: vocabulary id, or the pad row for `None`.
    /// Out-of-vocabulary symbols also map to pad, keeping scoring total.
    fn sym_slot(&self, sym: Option<u32>) -> usize {
        match sym {
            Some(s) if (s as usize) < self.vocab => s as usize,
            _ => self.vocab,
        }
    }

    pub fn window_row(&self, slot: usize, sym: Option<u32>) -> usize {
        debug_assert!(slot < self.window);
        slot * self.width() + self.sym_slot(sym)
    }

    pub fn phase_row(&self, phase: Phase) -> usize {
        self.window * self.width() + phase.id()
    }

    pub fn block_row(&self, block: LookupBlock, sym: Option<u32>) -> usize {
        self.window * self.width()
            + Phase::COUNT
            + block.index() * self.width()
            + self.sym_slot(sym)
    }

    pub fn rows(&self) -> usize {
        (self.window + LookupBlock::COUNT) * self.width() + Phase::COUNT
    }

    /// Weight-matrix entries plus the bias vector.
    pub fn param_count(&self) -> usize {
        self.rows() * self.vocab + self.vocab
    }
}

/// Active feature rows for one context: `window` rows, one phase row, and at
/// most one lookup row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Features {
    pub rows: Vec<usize>,
}

/// Assemble features from the tracker and the generated-token history.
pub fn features(layout: &FeatureLayout, tracker: &ContextTracker, history: &[u32]) -> Features {
    let mut rows = Vec::with_capacity(layout.window + 2);
    for slot in 0..layout.window {
        let sym = history
            .len()
            .checked_sub(slot + 1)
            .map(|i| history[i]);
        rows.push(layout.window_row(slot, sym));
    }
    rows.push(layout.phase_row(tracker.phase()));
    if let Some((block, sym)) = tracker.live_lookup() {
        rows.push(layout.block_row(block, sym));
    }
    Features { rows }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Flat parameter vector: `rows x V` weights row-major, then `V` bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(config: PolicyConfig) -> Result<PolicyParams> {
        config.validate()?;
        let layout = FeatureLayout::new(&config);
        Ok(PolicyParams {
            config,
            theta: vec![0.0; layout.param_count()],
        })
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::new(&self.config)
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    fn vocab_len(&self) -> usize {
        self.config.vocab_size as usize
    }

    fn bias_offset(&self) -> usize {
        self.layout().rows() * self.vocab_len()
    }

    pub fn logits(&self, feats: &Features) -> Vec<f64> {
        let v = self.vocab_len();
        let bias = self.bias_offset();
        let mut logits = self.theta[bias..bias + v].to_vec();
        for &row in &feats.rows {
            let base = row * v;
            for (t, l) in logits.iter_mut().enumerate() {
                *l += self.theta[base + t];
            }
        }
        logits
    }

    /// Add `weight * d log p(token | feats) / d theta` into `grad`
    /// (same length as `theta`). `log_probs` must be the temperature-1
    /// log-softmax of this context's logits.
    pub fn accumulate_grad(
        &self,
        feats: &Features,
        log_probs: &[f64],
        token: u32,
        weight: f64,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.theta.len());
        let v = self.vocab_len();
        let bias = self.bias_offset();
        for t in 0..v {
            let indicator = (t as u32 == token) as u8 as f64;
            let g = weight * (indicator - log_probs[t].exp());
            grad[bias + t] += g;
            for &row in &feats.rows {
                grad[row * v + t] += g;
            }
        }
    }

    /// Atomic JSON checkpoint: write a sibling temp file, then rename over
    /// the target.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).expect("policy params serialize");
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<PolicyParams> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: PolicyParams =
            serde_json::from_str(&json).map_err(|e| Error::json(path, e))?;
        params.config.validate()?;
        let expected = FeatureLayout::new(&params.config).param_count();
        if params.theta.len() != expected {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters but the layout wants {expected}",
                params.theta.len()
            )));
        }
        Ok(params)
    }
}

/// Hand-set weights that realize the target behavior exactly: each phase
/// with a fixed target gets a bias of +10 on that token, and each lookup
/// block gets a +10 diagonal (symbol row s boosts token s). Greedy decoding
/// under these weights reproduces gold trajectories on every episode.
pub fn reference_params(config: PolicyConfig) -> Result<PolicyParams> {
    const W: f64 = 10.0;
    let mut params = PolicyParams::zeros(config)?;
    let layout = params.layout();
    let v = params.vocab_len();
    for phase in Phase::ALL {
        if let Some(target) = phase.fixed_target() {
            params.theta[layout.phase_row(phase) * v + target as usize] = W;
        }
    }
    for block in LookupBlock::ALL {
        for s in 0..v as u32 {
            params.theta[layout.block_row(block, Some(s)) * v + s as usize] = W;
        }
    }
    Ok(params)
}

// ---------------------------------------------------------------------------
// Softmax, sampling, scoring
// ---------------------------------------------------------------------------

/// Numerically stable log-softmax of `logits / temperature`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    assert!(temperature > 0.0, "temperature must be positive");
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = scaled.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
    scaled.iter().map(|l| l - log_sum).collect()
}

/// First index attaining the maximum (lowest id wins ties).
pub fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn sample_index(log_probs: &[f64], rng: &mut ChaCha8Rng) -> u32 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i as u32;
        }
    }
    (log_probs.len() - 1) as u32
}

/// One sampled rollout: tokens plus the temperature-1 log-probability each
/// token had at its sampling step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub logps: Vec<f64>,
}

/// Sample a trajectory at the given temperature, stopping on grammar accept,
/// grammar failure, or the length cap. Stored log-probs are temperature-1.
pub fn sample_trajectory(
    params: &PolicyParams,
    episode: &Episode,
    grammar: Grammar,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Generation {
    let vocab = params.config.validate().expect("config validated at construction");
    let layout = params.layout();
    let mut tracker = ContextTracker::new(episode, &vocab, grammar);
    let mut tokens = Vec::new();
    let mut logps = Vec::new();
    while !tracker.is_terminal() && tokens.len() < params.config.max_len {
        let feats = features(&layout, &tracker, &tokens);
        let logits = params.logits(&feats);
        let lp1 = log_softmax(&logits, 1.0);
        let token = if temperature == 1.0 {
            sample_index(&lp1, rng)
        } else {
            sample_index(&log_softmax(&logits, temperature), rng)
        };
        logps.push(lp1[token as usize]);
        tokens.push(token);
        tracker.advance(token);
    }
    Generation { tokens, logps }
}

/// Greedy decode: argmax token per step, lowest id on ties.
pub fn greedy_decode(params: &PolicyParams, episode: &Episode, grammar: Grammar) -> Vec<u32> {
    let vocab = params.config.validate().expect("config validated at construction");
    let layout = params.layout();
    let mut tracker = ContextTracker::new(episode, &vocab, grammar);
    let mut tokens = Vec::new();
    while !tracker.is_terminal() && tokens.len() < params.config.max_len {
        let feats = features(&layout, &tracker, &tokens);
        let token = argmax(&params.logits(&feats));
        tokens.push(token);
        tracker.advance(token);
    }
    tokens
}

/// Visit every position of `tokens` with its feature set and temperature-1
/// log-probabilities. Errors on tokens the softmax cannot score (ids at or
/// beyond the vocabulary).
pub fn walk_contexts<F>(
    params: &PolicyParams,
    episode: &Episode,
    grammar: Grammar,
    tokens: &[u32],
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &Features, &[f64]),
{
    let vocab = params.config.validate().expect("config validated at construction");
    let layout = params.layout();
    let mut tracker = ContextTracker::new(episode, &vocab, grammar);
    for (pos, &token) in tokens.iter().enumerate() {
        if token >= params.config.vocab_size {
            return Err(Error::TokenOutOfRange {
                id: token,
                size: params.config.vocab_size,
            });
        }
        let feats = features(&layout, &tracker, &tokens[..pos]);
        let lp1 = log_softmax(&params.logits(&feats), 1.0);
        visit(pos, &feats, &lp1);
        tracker.advance(token);
    }
    Ok(())
}

/// Total temperature-1 log-probability of `tokens` under the policy.
pub fn log_prob(
    params: &PolicyParams,
    episode: &Episode,
    grammar: Grammar,
    tokens: &[u32],
) -> Result<f64> {
    let mut total = 0.0;
    walk_contexts(params, episode, grammar, tokens, |pos, _, lp1| {
        total += lp1[tokens[pos] as usize];
    })?;
    Ok(total)
}
