//! Self-test of every analytic gradient against central finite differences.
//!
//! Two phases:
//!
//! 1. **Log-probability gradients.** Random parameters, random episodes,
//!    trajectories sampled from a *different* policy (so scored tokens are
//!    not always likely ones). The analytic gradient of the sequence
//!    log-probability is compared coordinate-wise against
//!    `(f(x+h) - f(x-h)) / 2h`.
//! 2. **Surrogate-loss gradients.** Groups are sampled from one policy and
//!    scored under perturbed parameters, so importance ratios spread away
//!    from one and the clip bounds genuinely engage (the run fails unless a
//!    fifth of the groups contain at least one clipped token). The loss used
//!    for differencing is a local reimplementation of the clipped surrogate,
//!    so this phase also cross-checks the trainer's loss value itself.
//!
//! The clipped surrogate is piecewise smooth; a finite-difference probe that
//! straddles a clip kink measures the average of two slopes and proves
//! nothing. Each probe therefore records which tokens took the clipped
//! branch at both probe points and skips the coordinate when the patterns
//! differ.
//!
//! Inactive parameter rows must not affect the loss at all, so for a few
//! zero-gradient coordinates the finite difference is required to vanish
//! identically, not merely approximately.

use serde::{Deserialize, Serialize};

use crate::env::{generate_episode, DatasetSpec, Episode};
use crate::error::{Error, Result};
use crate::grammar::Grammar;
use crate::policy::{log_prob, reference_params, sample_trajectory, walk_contexts, PolicyParams};
use crate::rng::{stream, Purpose};
use crate::trainer::{rs_grpo_loss, sample_group, GroupRollouts, TrainConfig};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub seed: u64,
    /// Random log-probability configurations to probe.
    pub logprob_configs: usize,
    /// Random off-policy groups to probe.
    pub group_configs: usize,
    /// Central-difference step.
    pub h: f64,
    /// Maximum relative error accepted for any probed coordinate.
    pub tol: f64,
    /// Deliberately corrupt one analytic coordinate; the run must then fail.
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 7,
            logprob_configs: 100,
            group_configs: 60,
            h: 1e-5,
            tol: 1e-4,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub logprob_configs: usize,
    pub logprob_coords: usize,
    pub logprob_max_rel_err: f64,
    pub group_configs: usize,
    pub group_coords: usize,
    pub group_max_rel_err: f64,
    /// Groups in which at least one token took the clipped branch.
    pub clip_active_groups: usize,
    /// Coordinates skipped because a probe straddled a clip kink.
    pub kink_skips: usize,
    /// Zero-gradient coordinates verified to leave the loss bit-identical.
    pub inactive_coords: usize,
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8)
}

/// Local reimplementation of the per-group clipped surrogate, returning the
/// loss and the clip pattern (one flag per trajectory token, in rollout
/// order).
fn surrogate(
    params: &PolicyParams,
    group: &GroupRollouts,
    eps_low: f64,
    eps_high: f64,
) -> Result<(f64, Vec<bool>)> {
    let tokens_total: usize = group.rollouts.iter().map(|r| r.tokens.len()).sum();
    let mut sum = 0.0;
    let mut pattern = Vec::with_capacity(tokens_total);
    for rollout in &group.rollouts {
        walk_contexts(params, &group.episode, group.grammar, &rollout.tokens, |pos, _, lp1| {
            let ratio = (lp1[rollout.tokens[pos] as usize] - rollout.old_logps[pos]).exp();
            let adv = rollout.advantages[pos];
            let lo = (1.0 - eps_low) * adv;
            let hi = (1.0 + eps_high) * adv;
            let unclipped = ratio * adv;
            let clipped_val = if adv >= 0.0 { hi } else { lo };
            let take_clipped = if adv >= 0.0 {
                ratio > 1.0 + eps_high
            } else {
                ratio < 1.0 - eps_low
            };
            sum += if take_clipped { clipped_val } else { unclipped };
            pattern.push(take_clipped && adv != 0.0);
        })?;
    }
    Ok((-sum / tokens_total.max(1) as f64, pattern))
}

/// Parameters with reward-relevant structure plus noise: a scaled copy of
/// the hand-built reference policy, perturbed coordinate-wise.
fn noisy_params(scale: f64, noise: f64, rng: &mut rand_chacha::ChaCha8Rng) -> PolicyParams {
    use rand::Rng;
    let mut p = reference_params(Default::default()).expect("default config");
    for t in p.theta.iter_mut() {
        *t = *t * scale + rng.gen_range(-noise..noise);
    }
    p
}

fn episode_for(seed: u64, index: u64) -> Episode {
    let spec = DatasetSpec::default();
    let mut rng = stream(seed, Purpose::GradCheck, index);
    generate_episode(&spec, &mut rng).expect("default spec generates")
}

pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    use rand::Rng;
    let mut report = GradCheckReport {
        logprob_configs: 0,
        logprob_coords: 0,
        logprob_max_rel_err: 0.0,
        group_configs: 0,
        group_coords: 0,
        group_max_rel_err: 0.0,
        clip_active_groups: 0,
        kink_skips: 0,
        inactive_coords: 0,
    };

    // Phase 1: log-probability gradients.
    for i in 0..cfg.logprob_configs {
        let mut rng = stream(cfg.seed, Purpose::GradCheck, 1_000_000 + i as u64);
        let episode = episode_for(cfg.seed, i as u64);
        let grammar = if i % 3 == 2 {
            Grammar::ThinkAnswer
        } else {
            Grammar::Full { k: episode.k() }
        };
        let scoring = noisy_params(rng.gen_range(0.1..1.0), 0.4, &mut rng);
        let sampler = noisy_params(rng.gen_range(0.2..1.0), 0.2, &mut rng);
        let gen = sample_trajectory(&sampler, &episode, grammar, 1.5, &mut rng);
        if gen.tokens.is_empty() {
            continue;
        }
        let mut grad = vec![0.0; scoring.param_count()];
        walk_contexts(&scoring, &episode, grammar, &gen.tokens, |pos, feats, lp1| {
            scoring.accumulate_grad(feats, lp1, gen.tokens[pos], 1.0, &mut grad);
        })?;
        let value_at = |theta_i: usize, delta: f64, probe: &mut PolicyParams| -> Result<f64> {
            probe.theta[theta_i] += delta;
            let v = log_prob(probe, &episode, grammar, &gen.tokens);
            probe.theta[theta_i] -= delta;
            v
        };
        let mut probe = scoring.clone();
        // Active coordinates, spread across the gradient support.
        let active: Vec<usize> = grad
            .iter()
            .enumerate()
            .filter(|(_, g)| g.abs() > 1e-3)
            .map(|(j, _)| j)
            .step_by(97)
            .take(4)
            .collect();
        for j in active {
            let up = value_at(j, cfg.h, &mut probe)?;
            let down = value_at(j, -cfg.h, &mut probe)?;
            let fd = (up - down) / (2.0 * cfg.h);
            let e = rel_err(grad[j], fd);
            report.logprob_max_rel_err = report.logprob_max_rel_err.max(e);
            report.logprob_coords += 1;
            if e > cfg.tol {
                return Err(Error::GradCheckFailed(format!(
                    "log-prob config {i}, coordinate {j}: analytic {} vs central difference {fd}",
                    grad[j]
                )));
            }
        }
        // One structurally-inactive coordinate: the loss must not move at all.
        if let Some(j) = grad.iter().position(|&g| g == 0.0) {
            let up = value_at(j, 1e3, &mut probe)?;
            let down = value_at(j, -1e3, &mut probe)?;
            let base = log_prob(&scoring, &episode, grammar, &gen.tokens)?;
            if up != base || down != base {
                return Err(Error::GradCheckFailed(format!(
                    "log-prob config {i}: inactive coordinate {j} moved the loss"
                )));
            }
            report.inactive_coords += 1;
        }
        report.logprob_configs += 1;
    }

    // Phase 2: surrogate-loss gradients on off-policy groups.
    let train_cfg = TrainConfig {
        group_size: 4,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let (eps_low, eps_high) = (train_cfg.eps_low, train_cfg.eps_high);
    let mut groups_done = 0usize;
    let mut attempt = 0u64;
    while groups_done < cfg.group_configs {
        attempt += 1;
        if attempt > 20 * cfg.group_configs as u64 {
            return Err(Error::GradCheckFailed(
                "could not assemble enough groups with reward variance".into(),
            ));
        }
        let mut rng = stream(cfg.seed, Purpose::GradCheck, 2_000_000 + attempt);
        let episode = episode_for(cfg.seed, 5_000_000 + attempt);
        // Sample under the reference policy; score under a perturbation of
        // it, so ratios spread on both sides of one.
        let sampler = reference_params(Default::default())?;
        let delta: f64 = rng.gen_range(0.05..0.12);
        let scoring = {
            let mut p = sampler.clone();
            for t in p.theta.iter_mut() {
                *t += rng.gen_range(-delta..delta);
            }
            p
        };
        let group = sample_group(&sampler, &episode, &train_cfg, 3_000_000 + attempt)?;
        if !group.has_signal() {
            continue;
        }
        let groups = [group];
        let mut grad = vec![0.0; scoring.param_count()];
        let (loss, _) = rs_grpo_loss(&scoring, &groups, eps_low, eps_high, &mut grad)?;
        if cfg.corrupt {
            // Deliberate fault injection: the checker must catch this.
            if let Some(j) = grad.iter().position(|g| g.abs() > 1e-3) {
                grad[j] *= 1.05;
            }
        }
        let (local_loss, pattern) = surrogate(&scoring, &groups[0], eps_low, eps_high)?;
        if (local_loss - loss).abs() > 1e-12 * loss.abs().max(1.0) {
            return Err(Error::GradCheckFailed(format!(
                "surrogate implementations disagree: {loss} vs {local_loss}"
            )));
        }
        if pattern.iter().any(|&c| c) {
            report.clip_active_groups += 1;
        }
        let coords: Vec<usize> = grad
            .iter()
            .enumerate()
            .filter(|(_, g)| g.abs() > 1e-3)
            .map(|(j, _)| j)
            .step_by(53)
            .take(5)
            .collect();
        let mut probe = scoring.clone();
        for j in coords {
            probe.theta[j] += cfg.h;
            let (up, pat_up) = surrogate(&probe, &groups[0], eps_low, eps_high)?;
            probe.theta[j] -= 2.0 * cfg.h;
            let (down, pat_down) = surrogate(&probe, &groups[0], eps_low, eps_high)?;
            probe.theta[j] += cfg.h;
            if pat_up != pat_down {
                report.kink_skips += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * cfg.h);
            let e = rel_err(grad[j], fd);
            report.group_max_rel_err = report.group_max_rel_err.max(e);
            report.group_coords += 1;
            if e > cfg.tol {
                return Err(Error::GradCheckFailed(format!(
                    "group {groups_done}, coordinate {j}: analytic {} vs central difference {fd}",
                    grad[j]
                )));
            }
        }
        groups_done += 1;
    }
    report.group_configs = groups_done;

    let need = cfg.group_configs / 5;
    if report.clip_active_groups < need {
        return Err(Error::GradCheckFailed(format!(
            "only {}/{} groups had an engaged clip; need at least {need}",
            report.clip_active_groups, report.group_configs
        )));
    }
    Ok(report)
}
