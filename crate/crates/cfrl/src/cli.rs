//! Subcommands behind the `cfrl` binary.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use cfrl_core::agent::{StepRecord, Trainer, UserEpisodes};
use cfrl_core::baselines::{
    impact_policy, popular_policy, train_linucb, LinUcbPolicy, Method, OnlineMfPolicy, Policy, QPolicy, RandomPolicy,
};
use cfrl_core::dataset::{make_splits, RatingDataset, RatingFormat, Split};
use cfrl_core::env::{CfEncoder, EnvConfig, StateKind, TaskMode};
use cfrl_core::eval::{aggregate, evaluate_policy, run_split, split_score, CellOutcome};
use cfrl_core::mf::{pretrain, MfModel};
use cfrl_core::qnet::QNetwork;

use crate::checkpoint::{self, MfManifest, QNetManifest};
use crate::config::RunConfig;
use crate::data;
use crate::logs::{self, CsvSink, TraceRow};
use crate::report;
use crate::IoError;

pub const DATASET_FILE: &str = "dataset.bin";
pub const MF_FILE: &str = "mf.bin";
pub const QNET_FILE: &str = "qnet.bin";
pub const LINUCB_FILE: &str = "linucb.bin";
pub const STATE_FILE: &str = "trainer_state.bin";
pub const LOG_FILE: &str = "train_log.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";

/// Command failure, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Method(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Method(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }
}

fn method_err(context: &str, e: cfrl_core::Error) -> CliError {
    CliError::Method(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "cfrl", version, about = "Multi-step interactive recommendation benchmark")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; split, model and episode seeds derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for evaluation fan-out.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Continue training from the checkpoint in the output directory.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Ratings file or dataset snapshot.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a ratings file; write a binary snapshot.
    Ingest {
        /// Input layout: tab (u.data) or double-colon (ratings.dat). Guessed when omitted.
        #[arg(long, value_parser = parse_format)]
        format: Option<RatingFormat>,
    },
    /// Fit the MF model on one split's training users.
    Pretrain {
        /// Split index.
        #[arg(long)]
        split: Option<usize>,
    },
    /// Train CFRL, raw-state DQN or LinUCB on one split.
    Train {
        /// cfrl, dqn or linucb.
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        /// task1 or task2.
        #[arg(long, value_parser = parse_task)]
        task: Option<TaskMode>,
        /// Training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Split index.
        #[arg(long)]
        split: Option<usize>,
        /// Also write the per-step episode trace.
        #[arg(long)]
        trace: bool,
    },
    /// Evaluate one method on one split's test users.
    Eval {
        /// random, popular, impact, mf, linucb, dqn or cfrl.
        #[arg(long, value_parser = parse_method)]
        method: Option<Method>,
        /// Comma-separated tasks.
        #[arg(long, value_delimiter = ',', value_parser = parse_task)]
        tasks: Option<Vec<TaskMode>>,
        /// Split index.
        #[arg(long)]
        split: Option<usize>,
        /// Trained policy (Q-network or LinUCB model).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every method on every split and task.
    Benchmark {
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', value_parser = parse_method, num_args = 0..)]
        methods: Option<Vec<Method>>,
        /// Comma-separated tasks.
        #[arg(long, value_delimiter = ',', value_parser = parse_task)]
        tasks: Option<Vec<TaskMode>>,
        /// Comma-separated split indices; all splits when omitted.
        #[arg(long, value_delimiter = ',')]
        splits: Option<Vec<usize>>,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method `{s}`"))
}

fn parse_task(s: &str) -> Result<TaskMode, String> {
    TaskMode::parse(s).ok_or_else(|| format!("unknown task `{s}` (task1 or task2)"))
}

fn parse_format(s: &str) -> Result<RatingFormat, String> {
    match s {
        "tab" | "tab-separated" | "u.data" => Ok(RatingFormat::TabSeparated),
        "double-colon" | "colon" | "ratings.dat" => Ok(RatingFormat::DoubleColon),
        _ => Err(format!("unknown format `{s}`")),
    }
}

/// Merges the config file (if any) with flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let c = &cli.common;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    if let Some(d) = &c.data {
        cfg.data.path = d.clone();
    }
    match &cli.command {
        Command::Ingest { format } => {
            if format.is_some() {
                cfg.data.format = *format;
            }
        }
        Command::Pretrain { split } => {
            if let Some(s) = split {
                cfg.split.index = *s;
            }
        }
        Command::Train { method, task, episodes, split, trace } => {
            if let Some(m) = method {
                cfg.train.method = *m;
            }
            if let Some(t) = task {
                cfg.agent.task = *t;
            }
            if let Some(k) = episodes {
                cfg.agent.episodes = *k;
            }
            if let Some(s) = split {
                cfg.split.index = *s;
            }
            cfg.train.trace |= trace;
        }
        Command::Eval { method, tasks, split, checkpoint } => {
            if let Some(m) = method {
                cfg.eval.methods = vec![*m];
            }
            if let Some(t) = tasks {
                cfg.eval.tasks = t.clone();
            }
            if let Some(s) = split {
                cfg.split.index = *s;
            }
            if checkpoint.is_some() {
                cfg.eval.checkpoint = checkpoint.clone();
            }
        }
        Command::Benchmark { methods, tasks, splits } => {
            if let Some(m) = methods {
                cfg.eval.methods = m.clone();
            }
            if let Some(t) = tasks {
                cfg.eval.tasks = t.clone();
            }
            if splits.is_some() {
                cfg.eval.splits = splits.clone();
            }
        }
    }
    if cfg.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".to_string()));
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Ingest { .. } => cmd_ingest(&cfg),
        Command::Pretrain { .. } => cmd_pretrain(&cfg).map(|_| ()),
        Command::Train { .. } => cmd_train(&cfg, cli.common.resume),
        Command::Eval { .. } => cmd_eval(&cfg),
        Command::Benchmark { .. } => cmd_benchmark(&cfg),
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<RatingDataset, CliError> {
    Ok(data::load_any(&cfg.data.path, cfg.data.format, cfg.data.min_user_ratings)?)
}

fn splits(cfg: &RunConfig, ds: &RatingDataset) -> Result<Vec<Split>, CliError> {
    make_splits(ds, &cfg.split.params, cfg.splits_seed()).map_err(|e| CliError::Usage(format!("splits: {e}")))
}

fn chosen_split(cfg: &RunConfig, ds: &RatingDataset) -> Result<Split, CliError> {
    let all = splits(cfg, ds)?;
    let n = all.len();
    all.into_iter()
        .nth(cfg.split.index)
        .ok_or_else(|| CliError::Usage(format!("split index {} out of range (0..{n})", cfg.split.index)))
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    cfg.write_resolved()?;
    let s = ds.stats();
    println!(
        "{}: {} users, {} items, {} ratings, mean {:.4}, density {:.4}",
        cfg.data.path.display(),
        s.m,
        s.n,
        s.rating_count,
        s.mean_rating,
        s.density
    );
    let path = cfg.out.join(DATASET_FILE);
    data::write_snapshot(&path, &ds)?;
    println!("snapshot written to {}", path.display());
    Ok(())
}

/// Returns the fitted model and where it was written.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<(MfModel, PathBuf), CliError> {
    let ds = load_dataset(cfg)?;
    let split = chosen_split(cfg, &ds)?;
    cfg.write_resolved()?;
    let (model, report) = pretrain(&ds, &split.train_users, &cfg.mf, split.seed).map_err(|e| method_err("MF pretraining", e))?;
    for (k, rmse) in report.epoch_rmse.iter().enumerate() {
        println!("epoch {:>3}  rmse {rmse:.6}", k + 1);
    }
    let path = cfg.out.join(MF_FILE);
    checkpoint::write_mf(&path, &model)?;
    let manifest = MfManifest {
        seed: split.seed,
        epochs: cfg.mf.epochs,
        train_rmse: report.final_rmse().unwrap_or(f64::NAN),
        split: cfg.split.index,
    };
    checkpoint::write_manifest(&path, &manifest)?;
    println!("MF checkpoint written to {}", path.display());
    Ok((model, path))
}

fn mf_path(cfg: &RunConfig) -> PathBuf {
    cfg.train.mf_checkpoint.clone().unwrap_or_else(|| cfg.out.join(MF_FILE))
}

fn load_mf(cfg: &RunConfig, ds: &RatingDataset) -> Result<MfModel, CliError> {
    let path = mf_path(cfg);
    let model = checkpoint::read_mf(&path)?;
    if model.num_items() != ds.num_items() {
        return Err(CliError::Usage(format!(
            "{}: MF model has {} items but the dataset has {}",
            path.display(),
            model.num_items(),
            ds.num_items()
        )));
    }
    Ok(model)
}

pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let split = chosen_split(cfg, &ds)?;
    let train_cfg = cfg.train_config(split.seed, cfg.agent.task);
    train_cfg.validate().map_err(|e| CliError::Usage(format!("agent: {e}")))?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| IoError::at(&cfg.out, e))?;
    let method = cfg.train.method;
    let mf = if method.needs_mf() { Some(load_mf(cfg, &ds)?) } else { None };
    cfg.write_resolved()?;
    match method {
        Method::LinUcb => {
            let model = mf.as_ref().ok_or_else(|| CliError::Usage("LinUCB needs an MF model".into()))?;
            let lin = train_linucb(&ds, &split, model, &train_cfg, &cfg.linucb).map_err(|e| method_err("LinUCB", e))?;
            let path = cfg.out.join(LINUCB_FILE);
            checkpoint::write_linucb(&path, &lin)?;
            println!("LinUCB model written to {}", path.display());
            Ok(())
        }
        Method::Cfrl | Method::Dqn => {
            let (encoder, state_kind, input) = match &mf {
                Some(m) => (Some(CfEncoder::with_step(m, train_cfg.online_step())), StateKind::Cf, m.d()),
                None => (None, StateKind::Raw, ds.num_items()),
            };
            let source = UserEpisodes {
                ds: &ds,
                users: &split.train_users,
                encoder,
                env: EnvConfig { task: train_cfg.task, horizon: train_cfg.horizon, state_kind },
            };
            let state_path = cfg.out.join(STATE_FILE);
            let mut trainer = if resume && state_path.exists() {
                let state = checkpoint::read_trainer_state(&state_path)?;
                let t = Trainer::resume(train_cfg.clone(), state).map_err(|e| method_err("resume", e))?;
                eprintln!("resuming after episode {}", t.episodes_done());
                t
            } else {
                Trainer::new(train_cfg.clone(), input, ds.num_items()).map_err(|e| method_err("trainer", e))?
            };
            let trace_path = cfg.out.join(TRACE_FILE);
            if cfg.train.trace {
                truncate_trace(&trace_path, trainer.episodes_done(), resume)?;
            }
            let mut trace = if cfg.train.trace { Some(CsvSink::open(&trace_path, resume)?) } else { None };
            let chunk = if cfg.train.checkpoint_every == 0 { usize::MAX } else { cfg.train.checkpoint_every };
            let mut trace_err: Option<IoError> = None;
            while trainer.episodes_done() < train_cfg.episodes {
                let result = trainer.run_traced(&source, chunk, |s: &StepRecord| {
                    if let (Some(sink), None) = (trace.as_mut(), trace_err.as_ref()) {
                        if let Err(e) = sink.write(&logs::trace_row(&ds, s)) {
                            trace_err = Some(e);
                        }
                    }
                });
                if let Some(e) = trace_err.take() {
                    return Err(e.into());
                }
                if let Err(e) = result {
                    // keep the last good checkpoint; record what was logged so far
                    write_log(&cfg.out.join(LOG_FILE), &ds, &trainer)?;
                    return Err(method_err("training", e));
                }
                if let Some(sink) = trace.as_mut() {
                    sink.flush()?;
                }
                checkpoint::write_atomic(&state_path, |p| checkpoint::write_trainer_state(p, &trainer.state()))?;
                write_log(&cfg.out.join(LOG_FILE), &ds, &trainer)?;
                let last = trainer.log().last();
                eprintln!(
                    "episode {:>6}/{}  reward/step {:.3}  td-loss {:.3}  syncs {}",
                    trainer.episodes_done(),
                    train_cfg.episodes,
                    last.map_or(0.0, |l| l.reward_sum / train_cfg.horizon as f64),
                    last.map_or(0.0, |l| l.mean_td_loss),
                    trainer.sync_count()
                );
            }
            let path = cfg.out.join(QNET_FILE);
            checkpoint::write_qnet(&path, trainer.network())?;
            checkpoint::write_manifest(
                &path,
                &QNetManifest {
                    seed: train_cfg.seed,
                    steps: trainer.train_steps(),
                    episodes: trainer.episodes_done(),
                    sync_period: train_cfg.sync_period,
                    gamma: train_cfg.gamma,
                    alpha: train_cfg.q_alpha,
                    state: if mf.is_some() { "cf" } else { "raw" }.to_string(),
                    task: train_cfg.task.label().to_string(),
                    split: cfg.split.index,
                },
            )?;
            write_log(&cfg.out.join(LOG_FILE), &ds, &trainer)?;
            println!("Q-network written to {}", path.display());
            Ok(())
        }
        other => Err(CliError::Usage(format!("{} has nothing to train", other.name()))),
    }
}

fn write_log(path: &Path, ds: &RatingDataset, trainer: &Trainer) -> Result<(), IoError> {
    let tmp = path.with_extension("csv.tmp");
    let mut sink = CsvSink::open(&tmp, false)?;
    for l in trainer.log() {
        sink.write(&logs::log_row(ds, l))?;
    }
    sink.flush()?;
    drop(sink);
    std::fs::rename(&tmp, path).map_err(|e| IoError::at(path, e))
}

/// Drops trace rows of episodes that the resumed checkpoint does not cover.
fn truncate_trace(path: &Path, keep_episodes: usize, resume: bool) -> Result<(), IoError> {
    if !resume || !path.exists() {
        return Ok(());
    }
    let rows: Vec<TraceRow> = logs::read_rows(path)?;
    let kept: Vec<&TraceRow> = rows.iter().filter(|r| r.episode < keep_episodes).collect();
    if kept.is_empty() {
        // an empty file would suppress the header on the next append
        return std::fs::remove_file(path).map_err(|e| IoError::at(path, e));
    }
    let mut sink = CsvSink::open(path, false)?;
    for r in kept {
        sink.write(r)?;
    }
    sink.flush()
}

/// Evaluates policies built by `make` over `users`, fanned out over `jobs`
/// threads. Scores come back in `users` order and do not depend on `jobs`.
pub fn evaluate_parallel<'a, F>(
    make: F,
    ds: &RatingDataset,
    users: &[usize],
    task: TaskMode,
    horizon: usize,
    seed: u64,
    jobs: usize,
) -> Result<Vec<f64>, cfrl_core::Error>
where
    F: Fn() -> Result<Box<dyn Policy + 'a>, cfrl_core::Error> + Sync,
{
    let jobs = jobs.clamp(1, users.len().max(1));
    if jobs == 1 {
        return evaluate_policy(make()?.as_mut(), ds, users, task, horizon, seed);
    }
    let chunk = users.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = users
            .chunks(chunk)
            .map(|part| {
                let make = &make;
                s.spawn(move || evaluate_policy(make()?.as_mut(), ds, part, task, horizon, seed))
            })
            .collect();
        let mut out = Vec::with_capacity(users.len());
        for h in handles {
            out.extend(h.join().unwrap_or_else(|p| std::panic::resume_unwind(p))?);
        }
        Ok(out)
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load_dataset(cfg)?;
    let split = chosen_split(cfg, &ds)?;
    if cfg.eval.methods.is_empty() || cfg.eval.tasks.is_empty() {
        return Err(CliError::Usage("eval needs a method and at least one task".into()));
    }
    std::fs::create_dir_all(&cfg.out).map_err(|e| IoError::at(&cfg.out, e))?;
    let mf = if cfg.eval.methods.iter().any(|m| m.needs_mf()) { Some(load_mf(cfg, &ds)?) } else { None };
    let qnet: Option<QNetwork> = if cfg.eval.methods.iter().any(|m| matches!(m, Method::Cfrl | Method::Dqn)) {
        Some(checkpoint::read_qnet(&cfg.eval.checkpoint.clone().unwrap_or_else(|| cfg.out.join(QNET_FILE)))?)
    } else {
        None
    };
    let linucb = if cfg.eval.methods.contains(&Method::LinUcb) {
        Some(checkpoint::read_linucb(&cfg.eval.checkpoint.clone().unwrap_or_else(|| cfg.out.join(LINUCB_FILE)))?)
    } else {
        None
    };
    cfg.write_resolved()?;
    let step = cfg.agent.online_step();
    let mut outcomes = Vec::new();
    for &task in &cfg.eval.tasks {
        for &method in &cfg.eval.methods {
            let make = || -> Result<Box<dyn Policy + '_>, cfrl_core::Error> {
                let need_mf = || mf.as_ref().ok_or(cfrl_core::Error::InvalidArgument("missing MF model".into()));
                let need_q = || qnet.as_ref().ok_or(cfrl_core::Error::InvalidArgument("missing Q-network".into()));
                Ok(match method {
                    Method::Random => Box::new(RandomPolicy::new()),
                    Method::Popular => Box::new(popular_policy(&ds, &split.train_users)),
                    Method::Impact => Box::new(impact_policy(&ds, &split.train_users)),
                    Method::Mf => Box::new(OnlineMfPolicy::new(need_mf()?)),
                    Method::LinUcb => {
                        let lin = linucb.clone().ok_or(cfrl_core::Error::InvalidArgument("missing LinUCB model".into()))?;
                        let mut p = LinUcbPolicy::from_model(lin, need_mf()?, step)?;
                        p.set_learning(false);
                        Box::new(p)
                    }
                    Method::Dqn => Box::new(QPolicy::raw("DQN", need_q()?)?),
                    Method::Cfrl => Box::new(QPolicy::cf("CFRL", need_q()?, need_mf()?, step)?),
                })
            };
            let score = evaluate_parallel(
                make,
                &ds,
                &split.test_users,
                task,
                cfg.agent.horizon,
                cfg.eval_seed(),
                cfg.jobs,
            )
            .and_then(|s| split_score(&s));
            outcomes.push(CellOutcome { method, task, split: cfg.split.index, score });
        }
    }
    finish_report(cfg, &outcomes)
}

pub fn cmd_benchmark(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.eval.methods.is_empty() {
        return Err(CliError::Usage("benchmark needs at least one method".into()));
    }
    if cfg.eval.tasks.is_empty() {
        return Err(CliError::Usage("benchmark needs at least one task".into()));
    }
    let ds = load_dataset(cfg)?;
    let all = splits(cfg, &ds)?;
    let indices: Vec<usize> = cfg.eval.splits.clone().unwrap_or_else(|| (0..all.len()).collect());
    if let Some(&bad) = indices.iter().find(|&&k| k >= all.len()) {
        return Err(CliError::Usage(format!("split index {bad} out of range (0..{})", all.len())));
    }
    cfg.write_resolved()?;
    let bench = cfg.benchmark_config();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<CellOutcome>> = Mutex::new(Vec::new());
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        let Some(&index) = indices.get(k) else { break };
        let cells = run_split(&ds, &all[index], index, &cfg.eval.methods, &cfg.eval.tasks, &bench);
        for c in &cells {
            match &c.score {
                Ok(s) => eprintln!("split {index} {} {}: {s:.4}", c.method.name(), c.task.label()),
                Err(e) => eprintln!("split {index} {} {}: FAILED ({e})", c.method.name(), c.task.label()),
            }
        }
        results.lock().unwrap_or_else(|p| p.into_inner()).extend(cells);
    };
    let jobs = cfg.jobs.min(indices.len()).max(1);
    std::thread::scope(|s| {
        for _ in 1..jobs {
            s.spawn(worker);
        }
        worker();
    });
    let mut outcomes = results.into_inner().unwrap_or_else(|p| p.into_inner());
    outcomes.sort_by_key(|o| (o.split, o.task.label(), o.method));
    finish_report(cfg, &outcomes)
}

fn finish_report(cfg: &RunConfig, outcomes: &[CellOutcome]) -> Result<(), CliError> {
    let results = aggregate(outcomes, &cfg.data.name);
    let text = report::render_table(&results, outcomes);
    report::write_text(&cfg.out.join(REPORT_TXT), &text)?;
    report::write_csv(&cfg.out.join(REPORT_CSV), &report::report_rows(outcomes, &cfg.data.name))?;
    print!("{text}");
    let failed = outcomes.iter().filter(|o| o.score.is_err()).count();
    if failed > 0 {
        return Err(CliError::Method(format!("{failed} cell(s) failed; see {}", cfg.out.join(REPORT_TXT).display())));
    }
    Ok(())
}
