//! Desk-scale reinforcement-learning engine for scope-tagged retrieval
//! trajectories: a tag-delimited rollout grammar, three reward channels
//! scored per scope, group-normalized scope-classed advantages, a clipped
//! surrogate policy-gradient loss, an analytically differentiable toy
//! policy, and a synthetic multi-document evidence-QA environment to train
//! and evaluate on.

pub mod advantage;
pub mod cli;
pub mod config;
pub mod context;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grammar;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod trainer;
pub mod vocab;

pub use advantage::{
    aggregate_token_rewards, channel_set, group_advantages, ChannelSet, NormalizationMode,
    ScopeMapping, TokenRewardRow,
};
pub use context::{ContextTracker, DocRole, EpisodeClass, LookupBlock, Phase};
pub use env::{
    curriculum_filter, encode_episode, generate_dataset, generate_episode, gold_trajectory,
    gold_trajectory_for, split_dataset, CurriculumEntry, CurriculumReport, DatasetSpec, Episode,
};
pub use error::{Error, Result};
pub use grammar::{parse, Grammar, ScopeId, Span, StreamParser, TaggedTrajectory};
pub use policy::{
    greedy_decode, log_prob, log_softmax, reference_params, sample_trajectory, walk_contexts,
    FeatureLayout, Features, Generation, PolicyConfig, PolicyParams,
};
pub use reward::{
    derivation_reward, format_reward, perception_reward, score_rollout, token_bag_f1,
    AnswerRecord, Channel, ChannelScores, EvidenceRecord,
};
pub use rng::{stream, Purpose};
pub use config::RunConfig;
pub use data::{read_dataset, validate_episode, write_dataset, DatasetHeader, EpisodeRecord};
pub use gradcheck::{run_gradcheck, GradCheckConfig, GradCheckReport};
pub use eval::{evaluate, evaluate_with, ClassStats, EpisodeOutcome, EvalResult};
pub use trainer::{
    rs_grpo_loss, sample_group, sft_loss, train, GroupRollouts, Rollout, TrainConfig, TrainMode,
    TrainReport,
};
pub use vocab::{Tag, Vocabulary};
