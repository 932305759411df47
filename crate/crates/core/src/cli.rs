//! Command-line interface.
//!
//! Subcommands compose the library end to end:
//!
//! - `gen-data` writes `sft.jsonl` (with gold trajectories), `rl.jsonl`,
//!   and `eval.jsonl` plus a resolved `config.txt` into a directory.
//! - `train` consumes such a directory and runs one full training job,
//!   leaving `metrics.csv`, `checkpoint.json`, and `train_report.json`.
//! - `ablate` runs every training mode across a list of seeds (each seed
//!   gets its own generated data, shared by all modes at that seed) and
//!   tabulates post-warm-start and final evaluation metrics.
//! - `eval` scores a saved checkpoint against a dataset file, writing a
//!   summary and a per-episode audit log.
//! - `gradcheck` verifies analytic gradients against central differences
//!   and exits non-zero if any coordinate disagrees.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{read_dataset, write_dataset, DatasetHeader};
use crate::env::{generate_dataset, split_dataset, Episode};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::gradcheck::{run_gradcheck, GradCheckConfig};
use crate::policy::PolicyParams;
use crate::trainer::{train, TrainMode, TrainReport};

#[derive(Debug, Parser)]
#[command(
    name = "scoperl",
    about = "Scope-aware group-relative policy optimization on a synthetic evidence-QA task",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate dataset files and a resolved config snapshot.
    GenData(GenDataArgs),
    /// Train one policy on a gen-data directory.
    Train(TrainArgs),
    /// Train every mode across seeds and tabulate the results.
    Ablate(AblateArgs),
    /// Evaluate a checkpoint on a dataset file.
    Eval(EvalArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines (see `config.txt` snapshots).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.rl_lr=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.sets)
    }
}

fn parse_mode(s: &str) -> Result<TrainMode> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory produced by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Training mode; outranks the config file and --set.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<TrainMode>,
    /// Training seed; outranks the config file and --set.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Training seeds; each also offsets the data-generation seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Saved checkpoint.json.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file (e.g. eval.jsonl from gen-data).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Mode whose trajectory grammar the checkpoint was trained under.
    #[arg(long, value_parser = parse_mode, default_value = "rs-grpo")]
    pub mode: TrainMode,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Random log-probability configurations to probe.
    #[arg(long, default_value_t = 100)]
    pub logprob_configs: usize,
    /// Random off-policy groups to probe.
    #[arg(long, default_value_t = 60)]
    pub group_configs: usize,
    /// Fault-injection hook: corrupt one analytic coordinate per group and
    /// prove the checker trips.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

impl Cli {
    pub fn run(self) -> Result<()> {
        match self.command {
            Command::GenData(args) => gen_data(&args),
            Command::Train(args) => train_cmd(&args),
            Command::Ablate(args) => ablate(&args),
            Command::Eval(args) => eval_cmd(&args),
            Command::Gradcheck(args) => gradcheck_cmd(&args),
        }
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    mkdir(&args.out)?;
    let pool = generate_dataset(&cfg.data)?;
    let (sft, rl) = split_dataset(pool, cfg.data.seed);
    let eval_spec = cfg.eval_spec();
    let eval = generate_dataset(&eval_spec)?;
    let header = DatasetHeader::new(cfg.data.clone());
    write_dataset(&args.out.join("sft.jsonl"), &header, &sft, true)?;
    write_dataset(&args.out.join("rl.jsonl"), &header, &rl, false)?;
    write_dataset(
        &args.out.join("eval.jsonl"),
        &DatasetHeader::new(eval_spec),
        &eval,
        false,
    )?;
    cfg.write_snapshot(&args.out.join("config.txt"))?;
    println!(
        "wrote {} sft / {} rl / {} eval episodes to {}",
        sft.len(),
        rl.len(),
        eval.len(),
        args.out.display()
    );
    Ok(())
}

/// Load the three dataset files a training run needs.
fn load_data_dir(dir: &Path, vocab_size: u32) -> Result<(Vec<Episode>, Vec<Episode>, Vec<Episode>)> {
    let mut sets = Vec::with_capacity(3);
    for name in ["sft.jsonl", "rl.jsonl", "eval.jsonl"] {
        let (header, episodes) = read_dataset(&dir.join(name))?;
        if header.spec.vocab_size != vocab_size {
            return Err(Error::Config(format!(
                "{name} was generated with vocabulary {} but the policy uses {vocab_size}; \
                 pass --set data.vocab_size={}",
                header.spec.vocab_size, header.spec.vocab_size
            )));
        }
        sets.push(episodes);
    }
    let eval = sets.pop().expect("three sets");
    let rl = sets.pop().expect("two sets");
    let sft = sets.pop().expect("one set");
    Ok((sft, rl, eval))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(mode) = args.mode {
        cfg.train.mode = mode;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    mkdir(&args.out)?;
    let (sft, rl, eval_set) = load_data_dir(&args.data, cfg.train.policy.vocab_size)?;
    let (_, report) = train(&cfg.train, &sft, &rl, &eval_set, &args.out)?;
    cfg.write_snapshot(&args.out.join("config.txt"))?;
    write_json(&args.out.join("train_report.json"), &report)?;
    println!(
        "{} seed {}: accuracy {:.4} -> {:.4}, f1 {:.4} -> {:.4} over {} steps",
        report.mode,
        report.seed,
        report.post_sft.accuracy,
        report.final_eval.accuracy,
        report.post_sft.f1,
        report.final_eval.f1,
        report.rl_steps
    );
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    if args.seeds.is_empty() {
        return Err(Error::Config("ablate needs at least one seed".into()));
    }
    mkdir(&args.out)?;
    cfg.write_snapshot(&args.out.join("config.txt"))?;
    let csv_path = args.out.join("ablation.csv");
    let mut csv = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(csv, "mode,seed,post_sft_acc,post_sft_f1,final_acc,final_f1")
        .map_err(|e| Error::io(&csv_path, e))?;
    for &seed in &args.seeds {
        // Each seed gets its own data, shared by all four modes so they
        // compete on identical episodes.
        let mut data_spec = cfg.data.clone();
        data_spec.seed = cfg.data.seed.wrapping_add(seed);
        let mut eval_spec = cfg.eval_spec();
        eval_spec.seed = cfg.eval_seed.wrapping_add(seed);
        let pool = generate_dataset(&data_spec)?;
        let (sft, rl) = split_dataset(pool, data_spec.seed);
        let eval_set = generate_dataset(&eval_spec)?;
        for mode in TrainMode::ALL {
            let mut train_cfg = cfg.train.clone();
            train_cfg.mode = mode;
            train_cfg.seed = seed;
            let out = args.out.join(format!("seed-{seed}")).join(mode.as_str());
            mkdir(&out)?;
            let (_, report) = train(&train_cfg, &sft, &rl, &eval_set, &out)?;
            write_json(&out.join("train_report.json"), &report)?;
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                mode,
                seed,
                report.post_sft.accuracy,
                report.post_sft.f1,
                report.final_eval.accuracy,
                report.final_eval.f1
            )
            .map_err(|e| Error::io(&csv_path, e))?;
            println!(
                "{mode} seed {seed}: accuracy {:.4} -> {:.4}, f1 {:.4} -> {:.4}",
                report.post_sft.accuracy,
                report.final_eval.accuracy,
                report.post_sft.f1,
                report.final_eval.f1
            );
        }
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let params = PolicyParams::load(&args.checkpoint)?;
    let (header, episodes) = read_dataset(&args.data)?;
    if header.spec.vocab_size != params.config.vocab_size {
        return Err(Error::Config(format!(
            "dataset vocabulary {} differs from checkpoint vocabulary {}",
            header.spec.vocab_size, params.config.vocab_size
        )));
    }
    mkdir(&args.out)?;
    let mode = args.mode;
    let (result, outcomes) = evaluate(&params, &episodes, |e| mode.grammar(e.k()));
    write_json(&args.out.join("eval.json"), &result)?;
    let audit_path = args.out.join("audit.jsonl");
    let mut audit = fs::File::create(&audit_path).map_err(|e| Error::io(&audit_path, e))?;
    for outcome in &outcomes {
        let line = serde_json::to_string(outcome).map_err(|e| Error::json(&audit_path, e))?;
        writeln!(audit, "{line}").map_err(|e| Error::io(&audit_path, e))?;
    }
    println!(
        "{} episodes: accuracy {:.4}, f1 {:.4}, abstention {:.4}",
        result.n, result.accuracy, result.f1, result.abstention_rate
    );
    Ok(())
}

fn gradcheck_cmd(args: &GradcheckArgs) -> Result<()> {
    let cfg = GradCheckConfig {
        seed: args.seed,
        logprob_configs: args.logprob_configs,
        group_configs: args.group_configs,
        corrupt: args.corrupt_gradient,
        ..GradCheckConfig::default()
    };
    let report = run_gradcheck(&cfg)?;
    println!(
        "log-prob: {} configs, {} coordinates, max rel err {:.3e}",
        report.logprob_configs, report.logprob_coords, report.logprob_max_rel_err
    );
    println!(
        "surrogate: {} groups ({} clip-active), {} coordinates, max rel err {:.3e}, {} kink skips",
        report.group_configs,
        report.clip_active_groups,
        report.group_coords,
        report.group_max_rel_err,
        report.kink_skips
    );
    println!("gradients verified");
    Ok(())
}

/// Render a train report row; shared by tests that read reports back.
pub fn report_summary(report: &TrainReport) -> String {
    format!(
        "{},{},{},{},{},{}",
        report.mode,
        report.seed,
        report.post_sft.accuracy,
        report.post_sft.f1,
        report.final_eval.accuracy,
        report.final_eval.f1
    )
}
