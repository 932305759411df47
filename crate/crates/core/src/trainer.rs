//! Two-stage trainer: supervised warm start, then group-relative policy
//! optimization with scope-aware advantages.
//!
//! The supervised stage minimizes mean token negative log-likelihood of gold
//! trajectories. The reinforcement stage repeats, per optimizer step: sample
//! a batch of episodes, draw G rollouts per episode at the sampling
//! temperature, score each rollout's three reward channels, convert them to
//! per-token advantages (normalization class chosen by the training mode),
//! and take one gradient step on the clipped surrogate
//!
//! ```text
//! L(group) = -(1 / sum_i |o_i|) * sum_i sum_t
//!            min( r_it * A_it, clip(r_it, 1 - eps_low, 1 + eps_high) * A_it )
//! ```
//!
//! with `r_it` the temperature-1 probability ratio between the current
//! parameters and the parameters that sampled the rollout, and asymmetric
//! clip bounds (the upper bound is looser, so raising the probability of a
//! good-but-rare token clips later than killing a bad one). The batch loss is
//! the mean of per-group losses. There is no KL penalty; one optimizer step
//! is taken per rollout batch, so ratios start at one and the clip only
//! engages through the surrogate's off-policy form (exercised directly by
//! the gradient checker). Weight decay enters as a separate additive
//! `wd * theta` term after the surrogate gradient is norm-capped.
//!
//! Four modes share this machinery and differ only in trajectory grammar and
//! reward-to-token mapping:
//!
//! - `rs-grpo`: full grammar, scope-dependent channel sets.
//! - `mixed-grpo`: full grammar, every token carries all three channels.
//! - `answer-only`: full grammar, every token carries derivation + format.
//! - `think-then-answer`: two-span grammar, derivation + format.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::advantage::{
    aggregate_token_rewards, group_advantages, ChannelSet, NormalizationMode, ScopeMapping,
};
use crate::env::{curriculum_filter, gold_trajectory_for, CurriculumReport, Episode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResult};
use crate::grammar::{parse, Grammar};
use crate::policy::{sample_trajectory, walk_contexts, PolicyConfig, PolicyParams};
use crate::reward::{score_rollout, ChannelScores};
use crate::rng::{stream, Purpose};
use crate::vocab::Vocabulary;

// ---------------------------------------------------------------------------
// Modes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainMode {
    RsGrpo,
    MixedGrpo,
    AnswerOnly,
    ThinkThenAnswer,
}

impl TrainMode {
    pub const ALL: [TrainMode; 4] = [
        TrainMode::RsGrpo,
        TrainMode::MixedGrpo,
        TrainMode::AnswerOnly,
        TrainMode::ThinkThenAnswer,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::RsGrpo => "rs-grpo",
            TrainMode::MixedGrpo => "mixed-grpo",
            TrainMode::AnswerOnly => "answer-only",
            TrainMode::ThinkThenAnswer => "think-then-answer",
        }
    }

    pub fn grammar(&self, k: usize) -> Grammar {
        match self {
            TrainMode::ThinkThenAnswer => Grammar::ThinkAnswer,
            _ => Grammar::Full { k },
        }
    }

    pub fn mapping(&self) -> ScopeMapping {
        match self {
            TrainMode::RsGrpo => ScopeMapping::Scoped,
            TrainMode::MixedGrpo => ScopeMapping::Uniform(ChannelSet::ALL),
            TrainMode::AnswerOnly | TrainMode::ThinkThenAnswer => {
                ScopeMapping::Uniform(ChannelSet::DERIVATION_FORMAT)
            }
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<TrainMode> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode {s:?}; expected one of rs-grpo, mixed-grpo, answer-only, think-then-answer"
                ))
            })
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub seed: u64,
    pub policy: PolicyConfig,
    pub sft_epochs: usize,
    pub sft_batch: usize,
    pub sft_lr: f64,
    pub epochs: usize,
    pub rollout_batch: usize,
    pub group_size: usize,
    pub temperature: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub rl_lr: f64,
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub k_pos: f64,
    pub curriculum: bool,
    pub dynamic_sampling: bool,
    pub positional_norm: bool,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::RsGrpo,
            seed: 0,
            policy: PolicyConfig::default(),
            sft_epochs: 2,
            sft_batch: 32,
            sft_lr: 1.0,
            epochs: 4,
            rollout_batch: 32,
            group_size: 8,
            temperature: 1.2,
            eps_low: 0.2,
            eps_high: 0.28,
            rl_lr: 0.4,
            grad_clip: 1.0,
            weight_decay: 1e-2,
            k_pos: 2.0,
            curriculum: true,
            dynamic_sampling: false,
            positional_norm: false,
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Settings that reliably demonstrate the reward-scoped learning effect
    /// on the default synthetic task at desk scale.
    ///
    /// The stock defaults mirror large-model practice (rollout temperature
    /// 1.2, four epochs, weight decay), but the toy linear policy learns
    /// logit margins of only a few nats under SFT, so temperature-1.2
    /// sampling almost never produces a well-formed trajectory and the
    /// group advantages carry no signal. This preset cools exploration to
    /// match the policy's actual logit scale, trains SFT to a deliberately
    /// partial fit (leaving headroom the reward channels can recover),
    /// drops weight decay (which erodes the tiny SFT weights faster than
    /// the policy gradient rebuilds them), and runs more, smaller steps
    /// with larger groups so each group is likely to contain at least one
    /// high-reward rollout to normalize against.
    pub fn calibrated() -> Self {
        TrainConfig {
            sft_epochs: 4,
            sft_lr: 16.0,
            epochs: 16,
            rollout_batch: 16,
            group_size: 16,
            temperature: 0.15,
            rl_lr: 4.0,
            grad_clip: 10.0,
            weight_decay: 0.0,
            dynamic_sampling: true,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.group_size < 2 {
            return Err(Error::GroupTooSmall {
                got: self.group_size,
            });
        }
        for (name, v) in [
            ("temperature", self.temperature),
            ("eps_low", self.eps_low),
            ("eps_high", self.eps_high),
            ("rl_lr", self.rl_lr),
            ("sft_lr", self.sft_lr),
            ("grad_clip", self.grad_clip),
            ("k_pos", self.k_pos),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if self.eps_low >= 1.0 {
            return Err(Error::Config(format!(
                "eps_low {} leaves no lower clip range",
                self.eps_low
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "weight_decay must be finite and non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.rollout_batch == 0 || self.sft_batch == 0 || self.workers == 0 {
            return Err(Error::Config(
                "rollout_batch, sft_batch, and workers must be positive".into(),
            ));
        }
        Ok(())
    }

    fn normalization(&self) -> NormalizationMode {
        if self.positional_norm {
            NormalizationMode::Positional
        } else {
            NormalizationMode::ScopeClass
        }
    }
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// One sampled rollout with everything the loss needs.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub tokens: Vec<u32>,
    /// Temperature-1 log-probs recorded at sampling time (the "old" side of
    /// every importance ratio).
    pub old_logps: Vec<f64>,
    pub scores: ChannelScores,
    pub advantages: Vec<f64>,
}

/// G rollouts for one episode, advantages already group-normalized.
#[derive(Debug, Clone)]
pub struct GroupRollouts {
    pub episode: Episode,
    pub grammar: Grammar,
    pub rollouts: Vec<Rollout>,
}

impl GroupRollouts {
    /// A group with no non-zero advantage anywhere contributes exactly zero
    /// gradient; dynamic sampling drops such groups from the batch.
    pub fn has_signal(&self) -> bool {
        self.rollouts
            .iter()
            .any(|r| r.advantages.iter().any(|&a| a != 0.0))
    }

    fn token_total(&self) -> usize {
        self.rollouts.iter().map(|r| r.tokens.len()).sum()
    }
}

/// Sample and score one episode's group. `stream_index` must be unique per
/// sampled group so results are independent of batching and worker count.
pub fn sample_group(
    params: &PolicyParams,
    episode: &Episode,
    cfg: &TrainConfig,
    stream_index: u64,
) -> Result<GroupRollouts> {
    let grammar = cfg.mode.grammar(episode.k());
    let vocab = Vocabulary::new(cfg.policy.vocab_size)?;
    let mut rng = stream(cfg.seed, Purpose::Rollout, stream_index);
    let mut scores = Vec::with_capacity(cfg.group_size);
    let mut rows = Vec::with_capacity(cfg.group_size);
    let mut partial = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let gen = sample_trajectory(params, episode, grammar, cfg.temperature, &mut rng);
        let trajectory = parse(&gen.tokens, &vocab, grammar);
        let s = score_rollout(&trajectory, episode, cfg.k_pos);
        rows.push(aggregate_token_rewards(&trajectory, &s, cfg.mode.mapping()));
        scores.push(s);
        partial.push(gen);
    }
    let advantages = group_advantages(&scores, &rows, cfg.normalization())?;
    let rollouts = partial
        .into_iter()
        .zip(scores)
        .zip(advantages)
        .map(|((gen, s), adv)| Rollout {
            tokens: gen.tokens,
            old_logps: gen.logps,
            scores: s,
            advantages: adv,
        })
        .collect();
    Ok(GroupRollouts {
        episode: episode.clone(),
        grammar,
        rollouts,
    })
}

/// Sample many groups, fanning episodes across `workers` threads. Stream
/// indices are pre-assigned, so any worker count yields identical results.
fn sample_groups(
    params: &PolicyParams,
    jobs: &[(u64, &Episode)],
    cfg: &TrainConfig,
) -> Result<Vec<GroupRollouts>> {
    if cfg.workers <= 1 || jobs.len() <= 1 {
        return jobs
            .iter()
            .map(|&(idx, ep)| sample_group(params, ep, cfg, idx))
            .collect();
    }
    let chunk = jobs.len().div_ceil(cfg.workers);
    let mut out: Vec<Result<Vec<GroupRollouts>>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|batch| {
                scope.spawn(move || {
                    batch
                        .iter()
                        .map(|&(idx, ep)| sample_group(params, ep, cfg, idx))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        out = handles.into_iter().map(|h| h.join().expect("sampler thread")).collect();
    });
    let mut groups = Vec::with_capacity(jobs.len());
    for chunk in out {
        groups.extend(chunk?);
    }
    Ok(groups)
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean token negative log-likelihood of gold sequences; accumulates the
/// loss gradient (not the descent direction) into `grad`.
pub fn sft_loss(
    params: &PolicyParams,
    batch: &[(&Episode, &[u32])],
    grammar_of: impl Fn(&Episode) -> Grammar,
    grad: &mut [f64],
) -> Result<f64> {
    let total_tokens: usize = batch.iter().map(|(_, t)| t.len()).sum();
    if total_tokens == 0 {
        return Ok(0.0);
    }
    let scale = 1.0 / total_tokens as f64;
    let mut nll = 0.0;
    for (episode, tokens) in batch {
        walk_contexts(params, episode, grammar_of(episode), tokens, |pos, feats, lp1| {
            nll -= lp1[tokens[pos] as usize];
            params.accumulate_grad(feats, lp1, tokens[pos], -scale, grad);
        })?;
    }
    Ok(nll * scale)
}

/// Clipped-surrogate loss over a batch of groups: mean over groups of the
/// token-normalized group loss. Accumulates the loss gradient into `grad`
/// and reports the fraction of tokens whose ratio was clipped (advantage
/// non-zero and the min picked the clipped branch).
pub fn rs_grpo_loss(
    params: &PolicyParams,
    groups: &[GroupRollouts],
    eps_low: f64,
    eps_high: f64,
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    assert!(!groups.is_empty(), "loss over an empty batch");
    let n_groups = groups.len() as f64;
    let mut loss = 0.0;
    let mut clipped = 0usize;
    let mut tokens_total = 0usize;
    for group in groups {
        let group_tokens = group.token_total();
        if group_tokens == 0 {
            continue;
        }
        let grammar = group.grammar;
        let norm = 1.0 / group_tokens as f64;
        let mut group_sum = 0.0;
        for (i, rollout) in group.rollouts.iter().enumerate() {
            let mut bad: Option<Error> = None;
            walk_contexts(params, &group.episode, grammar, &rollout.tokens, |pos, feats, lp1| {
                if bad.is_some() {
                    return;
                }
                let ratio = (lp1[rollout.tokens[pos] as usize] - rollout.old_logps[pos]).exp();
                if !ratio.is_finite() {
                    bad = Some(Error::NonFiniteRatio {
                        rollout: i,
                        token: pos,
                    });
                    return;
                }
                let adv = rollout.advantages[pos];
                // min(r * A, clip(r) * A): for A > 0 the min engages at the
                // upper bound, for A < 0 at the lower one.
                let (term, active) = if adv >= 0.0 {
                    if ratio > 1.0 + eps_high {
                        (adv * (1.0 + eps_high), false)
                    } else {
                        (adv * ratio, true)
                    }
                } else if ratio < 1.0 - eps_low {
                    (adv * (1.0 - eps_low), false)
                } else {
                    (adv * ratio, true)
                };
                group_sum += term;
                if !active && adv != 0.0 {
                    clipped += 1;
                }
                if active && adv != 0.0 {
                    // d(-term)/d theta = -A * r * d log p / d theta.
                    params.accumulate_grad(
                        feats,
                        lp1,
                        rollout.tokens[pos],
                        -adv * ratio * norm / n_groups,
                        grad,
                    );
                }
            })?;
            if let Some(e) = bad {
                return Err(e);
            }
        }
        loss -= group_sum * norm;
        tokens_total += group_tokens;
    }
    Ok((loss / n_groups, clipped as f64 / tokens_total.max(1) as f64))
}

// ---------------------------------------------------------------------------
// Optimizer step helpers
// ---------------------------------------------------------------------------

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale `grad` down to `cap` if its L2 norm exceeds it; returns the
/// pre-cap norm.
fn cap_grad_norm(grad: &mut [f64], cap: f64) -> f64 {
    let norm = l2_norm(grad);
    if norm > cap {
        let scale = cap / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Everything `train` leaves behind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: TrainMode,
    pub seed: u64,
    pub sft_final_loss: f64,
    pub post_sft: EvalResult,
    pub final_eval: EvalResult,
    pub rl_steps: usize,
    pub curriculum_kept: Option<usize>,
    pub curriculum_dropped: Option<usize>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

const CSV_HEADER: &str =
    "step,mode,mean_perception,mean_derivation,mean_format,loss,clip_fraction,eval_acc,eval_f1";

struct MetricsWriter {
    file: fs::File,
    path: PathBuf,
}

impl MetricsWriter {
    fn create(path: &Path) -> Result<MetricsWriter> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            file,
            path: path.to_path_buf(),
        };
        w.line(CSV_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.file, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &mut self,
        step: usize,
        mode: TrainMode,
        means: Option<ChannelScores>,
        loss: Option<f64>,
        clip: Option<f64>,
        eval: Option<&EvalResult>,
    ) -> Result<()> {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let line = format!(
            "{step},{mode},{},{},{},{},{},{},{}",
            f(means.map(|m| m.perception)),
            f(means.map(|m| m.derivation)),
            f(means.map(|m| m.format)),
            f(loss),
            f(clip),
            f(eval.map(|e| e.accuracy)),
            f(eval.map(|e| e.f1)),
        );
        self.line(&line)
    }
}

fn batch_score_means(groups: &[GroupRollouts]) -> ChannelScores {
    let mut sum = ChannelScores::ZERO;
    let mut n = 0usize;
    for g in groups {
        for r in &g.rollouts {
            sum.perception += r.scores.perception;
            sum.derivation += r.scores.derivation;
            sum.format += r.scores.format;
            n += 1;
        }
    }
    let nf = n.max(1) as f64;
    ChannelScores {
        perception: sum.perception / nf,
        derivation: sum.derivation / nf,
        format: sum.format / nf,
    }
}

/// Run the full pipeline: supervised warm start on `sft_set`, optional
/// curriculum filtering of `rl_set`, then `epochs` of group-relative steps,
/// evaluating on `eval_set` after the supervised stage and at each epoch
/// boundary. Writes `metrics.csv` and `checkpoint.json` under `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    sft_set: &[Episode],
    rl_set: &[Episode],
    eval_set: &[Episode],
    out_dir: &Path,
) -> Result<(PolicyParams, TrainReport)> {
    cfg.validate()?;
    if sft_set.is_empty() || rl_set.is_empty() || eval_set.is_empty() {
        return Err(Error::EmptyDataset("train/eval split"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let checkpoint_path = out_dir.join("checkpoint.json");
    let mut metrics = MetricsWriter::create(&metrics_path)?;
    let grammar_of = |e: &Episode| cfg.mode.grammar(e.k());

    let mut params = PolicyParams::zeros(cfg.policy)?;

    // Supervised warm start on gold trajectories under the mode's grammar.
    let gold: Vec<(Episode, Vec<u32>)> = sft_set
        .iter()
        .map(|e| (e.clone(), gold_trajectory_for(e, grammar_of(e)).tokens))
        .collect();
    let mut sft_final_loss = 0.0;
    for epoch in 0..cfg.sft_epochs {
        let mut order: Vec<usize> = (0..gold.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream(cfg.seed, Purpose::SftShuffle, epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.sft_batch) {
            let batch: Vec<(&Episode, &[u32])> = chunk
                .iter()
                .map(|&i| (&gold[i].0, gold[i].1.as_slice()))
                .collect();
            let mut grad = vec![0.0; params.param_count()];
            let loss = sft_loss(&params, &batch, grammar_of, &mut grad)?;
            for (t, g) in params.theta.iter_mut().zip(&grad) {
                *t -= cfg.sft_lr * g;
            }
            epoch_loss += loss;
            batches += 1;
        }
        sft_final_loss = epoch_loss / batches.max(1) as f64;
    }

    // Post-warm-start baseline: step 0 carries only evaluation cells.
    let (post_sft, _) = evaluate(&params, eval_set, grammar_of);
    metrics.row(0, cfg.mode, None, None, None, Some(&post_sft))?;

    // Curriculum: order the reinforcement set easiest-first and drop
    // episodes the warm-started policy already answers perfectly in all G
    // sampled completions.
    let (rl_episodes, curriculum) = if cfg.curriculum {
        let grammar_cache: Vec<Grammar> = rl_set.iter().map(&grammar_of).collect();
        let vocab = Vocabulary::new(cfg.policy.vocab_size)?;
        let mut cached: Vec<Vec<f64>> = Vec::with_capacity(rl_set.len());
        for (i, e) in rl_set.iter().enumerate() {
            let mut rng = stream(cfg.seed, Purpose::Curriculum, i as u64);
            let scores: Vec<f64> = (0..cfg.group_size)
                .map(|_| {
                    let gen =
                        sample_trajectory(&params, e, grammar_cache[i], cfg.temperature, &mut rng);
                    let traj = parse(&gen.tokens, &vocab, grammar_cache[i]);
                    score_rollout(&traj, e, cfg.k_pos).derivation
                })
                .collect();
            cached.push(scores);
        }
        let (kept, report) = curriculum_filter(rl_set, cfg.group_size, |e, r| cached[e][r]);
        (kept, Some(report))
    } else {
        (rl_set.to_vec(), None)
    };
    if rl_episodes.is_empty() {
        return Err(Error::EmptyDataset("curriculum kept no episodes"));
    }

    // Reinforcement epochs: one optimizer step per rollout batch.
    let mut step = 0usize;
    let mut stream_counter: u64 = 0;
    for epoch in 0..cfg.epochs {
        let mut cursor = 0usize;
        let mut last_step_of_epoch = false;
        while cursor < rl_episodes.len() {
            // Fill a batch, optionally skipping zero-signal groups.
            let mut groups: Vec<GroupRollouts> = Vec::with_capacity(cfg.rollout_batch);
            while groups.len() < cfg.rollout_batch && cursor < rl_episodes.len() {
                let want = cfg.rollout_batch - groups.len();
                let take = want.min(rl_episodes.len() - cursor);
                let jobs: Vec<(u64, &Episode)> = (0..take)
                    .map(|j| (stream_counter + j as u64, &rl_episodes[cursor + j]))
                    .collect();
                stream_counter += take as u64;
                cursor += take;
                for group in sample_groups(&params, &jobs, cfg)? {
                    if !cfg.dynamic_sampling || group.has_signal() {
                        groups.push(group);
                    }
                }
                if !cfg.dynamic_sampling {
                    break;
                }
            }
            if groups.is_empty() {
                break;
            }
            let mut grad = vec![0.0; params.param_count()];
            let (loss, clip_fraction) =
                rs_grpo_loss(&params, &groups, cfg.eps_low, cfg.eps_high, &mut grad)?;
            cap_grad_norm(&mut grad, cfg.grad_clip);
            for (i, t) in params.theta.iter_mut().enumerate() {
                *t -= cfg.rl_lr * (grad[i] + cfg.weight_decay * *t);
            }
            step += 1;
            last_step_of_epoch = cursor >= rl_episodes.len();
            let eval_now = if last_step_of_epoch {
                Some(evaluate(&params, eval_set, grammar_of).0)
            } else {
                None
            };
            metrics.row(
                step,
                cfg.mode,
                Some(batch_score_means(&groups)),
                Some(loss),
                Some(clip_fraction),
                eval_now.as_ref(),
            )?;
        }
        let _ = epoch;
        let _ = last_step_of_epoch;
        params.save(&checkpoint_path)?;
    }

    let (final_eval, _) = evaluate(&params, eval_set, grammar_of);
    params.save(&checkpoint_path)?;
    let report = TrainReport {
        mode: cfg.mode,
        seed: cfg.seed,
        sft_final_loss,
        post_sft,
        final_eval,
        rl_steps: step,
        curriculum_kept: curriculum.as_ref().map(|c| c.kept),
        curriculum_dropped: curriculum.as_ref().map(|c| c.dropped),
        metrics_path,
        checkpoint_path,
    };
    Ok((params, report))
}

/// Re-expose the curriculum report type for callers that persist it.
pub type Curriculum = CurriculumReport;
