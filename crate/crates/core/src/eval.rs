//! Offline evaluation: roll a policy for every test user, average, and
//! compare methods across splits.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::agent::{train_cfrl, TrainConfig};
use crate::baselines::{
    episode_seed, impact_policy, popular_policy, run_policy_episode, train_linucb, train_raw_dqn, EpisodeContext,
    LinUcbConfig, LinUcbPolicy, Method, OnlineMfPolicy, Policy, QPolicy, RandomPolicy,
};
use crate::dataset::{RatingDataset, Split, UserIndex};
use crate::env::{EnvConfig, StateKind, TaskMode};
use crate::error::{Error, Result};
use crate::mf::{pretrain, MfConfig, MfModel};
use crate::stats::{mean_std, paired_t_test};

/// Runs `policy` once per user and returns each user's mean reward per step.
pub fn evaluate_policy(
    policy: &mut dyn Policy,
    ds: &RatingDataset,
    users: &[UserIndex],
    task: TaskMode,
    horizon: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let env = EnvConfig { task, horizon, state_kind: StateKind::Raw };
    users
        .iter()
        .map(|&user| {
            let ctx = EpisodeContext { user, num_items: ds.num_items(), seed: episode_seed(seed, user) };
            let rewards = run_policy_episode(policy, ds, user, env, &ctx)?;
            Ok(rewards.iter().sum::<f64>() / horizon as f64)
        })
        .collect()
}

/// Mean of per-user scores; the split-level score.
pub fn split_score(per_user: &[f64]) -> Result<f64> {
    if per_user.is_empty() {
        return Err(Error::InvalidArgument("no test users".to_string()));
    }
    Ok(per_user.iter().sum::<f64>() / per_user.len() as f64)
}

/// One table cell: a method on one task and dataset, over all splits.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub method: String,
    pub task: TaskMode,
    pub dataset: String,
    pub per_split: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation of the per-split scores.
    pub std: f64,
}

impl EvalResult {
    pub fn new(method: &str, task: TaskMode, dataset: &str, per_split: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_split);
        Self { method: method.to_string(), task, dataset: dataset.to_string(), per_split, mean, std }
    }
}

/// Best against runner-up within one (task, dataset) column.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub task: TaskMode,
    pub dataset: String,
    pub best: String,
    pub second: String,
    /// `(best − second) / second`.
    pub improvement: f64,
    /// Two-sided paired t-test over per-split scores; `None` when it cannot be
    /// computed (fewer than two splits or identical differences).
    pub p_value: Option<f64>,
}

/// Relative improvement of `best` over `second`.
pub fn improvement(best: f64, second: f64) -> f64 {
    (best - second) / second
}

/// Ranks every (task, dataset) column of `results` by mean score.
pub fn compare(results: &[EvalResult]) -> Vec<ComparisonReport> {
    let mut columns: Vec<(TaskMode, &str)> = Vec::new();
    for r in results {
        if !columns.iter().any(|&(t, d)| t == r.task && d == r.dataset) {
            columns.push((r.task, &r.dataset));
        }
    }
    columns
        .into_iter()
        .filter_map(|(task, dataset)| {
            let mut cell: Vec<&EvalResult> =
                results.iter().filter(|r| r.task == task && r.dataset == dataset && r.mean.is_finite()).collect();
            if cell.len() < 2 {
                return None;
            }
            cell.sort_by(|a, b| b.mean.total_cmp(&a.mean));
            let (best, second) = (cell[0], cell[1]);
            let p_value = if best.per_split.len() == second.per_split.len() {
                paired_t_test(&best.per_split, &second.per_split).ok().map(|t| t.p_value)
            } else {
                None
            };
            Some(ComparisonReport {
                task,
                dataset: dataset.to_string(),
                best: best.method.clone(),
                second: second.method.clone(),
                improvement: improvement(best.mean, second.mean),
                p_value,
            })
        })
        .collect()
}

/// Everything a benchmark cell needs to train and evaluate its method.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BenchmarkConfig {
    pub mf: MfConfig,
    /// Shared by both Q-learning agents; `task` is overridden per column.
    pub train: TrainConfig,
    pub linucb: LinUcbConfig,
    pub eval_seed: u64,
}

/// Score of one method on one task for one split, or why it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub method: Method,
    pub task: TaskMode,
    pub split: usize,
    pub score: core::result::Result<f64, Error>,
}

/// Trains what each method needs on `split` and evaluates it on the test
/// users. A failing method is recorded and does not stop the others.
pub fn run_split(
    ds: &RatingDataset,
    split: &Split,
    split_index: usize,
    methods: &[Method],
    tasks: &[TaskMode],
    cfg: &BenchmarkConfig,
) -> Vec<CellOutcome> {
    let needs_mf = methods.iter().any(|m| m.needs_mf());
    let mf: Option<core::result::Result<MfModel, Error>> =
        needs_mf.then(|| pretrain(ds, &split.train_users, &cfg.mf, split.seed).map(|(m, _)| m));
    let mut out = Vec::new();
    for &task in tasks {
        for &method in methods {
            let score = match (&mf, method.needs_mf()) {
                (Some(Err(e)), true) => Err(e.clone()),
                (Some(Ok(model)), true) => run_cell(ds, split, method, task, Some(model), cfg),
                _ => run_cell(ds, split, method, task, None, cfg),
            };
            out.push(CellOutcome { method, task, split: split_index, score });
        }
    }
    out
}

fn run_cell(
    ds: &RatingDataset,
    split: &Split,
    method: Method,
    task: TaskMode,
    model: Option<&MfModel>,
    cfg: &BenchmarkConfig,
) -> Result<f64> {
    let train = TrainConfig { task, seed: split.seed ^ cfg.train.seed, ..cfg.train.clone() };
    let horizon = train.horizon;
    let need = || model.ok_or_else(|| Error::InvalidArgument("method needs an MF model".to_string()));
    let eval = |p: &mut dyn Policy| -> Result<f64> {
        split_score(&evaluate_policy(p, ds, &split.test_users, task, horizon, cfg.eval_seed)?)
    };
    match method {
        Method::Random => eval(&mut RandomPolicy::new()),
        Method::Popular => eval(&mut popular_policy(ds, &split.train_users)),
        Method::Impact => eval(&mut impact_policy(ds, &split.train_users)),
        Method::Mf => eval(&mut OnlineMfPolicy::new(need()?)),
        Method::LinUcb => {
            let model = need()?;
            let lin = train_linucb(ds, split, model, &train, &cfg.linucb)?;
            let mut p = LinUcbPolicy::from_model(lin, model, train.online_step())?;
            p.set_learning(false);
            eval(&mut p)
        }
        Method::Dqn => {
            let (net, _) = train_raw_dqn(ds, split, &train)?;
            eval(&mut QPolicy::raw("DQN", &net)?)
        }
        Method::Cfrl => {
            let model = need()?;
            let (net, _) = train_cfrl(ds, split, model, &train)?;
            eval(&mut QPolicy::cf("CFRL", &net, model, train.online_step())?)
        }
    }
}

/// Groups cell outcomes into table cells. Methods with any failed split are
/// reported with a NaN mean so the table shows the gap.
pub fn aggregate(outcomes: &[CellOutcome], dataset: &str) -> Vec<EvalResult> {
    let mut keys: Vec<(Method, TaskMode)> = Vec::new();
    for o in outcomes {
        if !keys.contains(&(o.method, o.task)) {
            keys.push((o.method, o.task));
        }
    }
    keys.into_iter()
        .map(|(method, task)| {
            let mut cells: Vec<&CellOutcome> = outcomes.iter().filter(|o| o.method == method && o.task == task).collect();
            cells.sort_by_key(|o| o.split);
            if cells.iter().all(|o| o.score.is_ok()) {
                let scores = cells.iter().filter_map(|o| o.score.as_ref().ok().copied()).collect();
                EvalResult::new(method.name(), task, dataset, scores)
            } else {
                EvalResult {
                    method: method.name().to_string(),
                    task,
                    dataset: dataset.to_string(),
                    per_split: Vec::new(),
                    mean: f64::NAN,
                    std: f64::NAN,
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RatingRecord;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    fn world() -> RatingDataset {
        let mut recs = vec![];
        for u in 0..12u64 {
            for i in 0..30u64 {
                if (u + i) % 3 != 0 {
                    recs.push(RatingRecord { user: u, item: i, rating: ((u * i) % 5 + 1) as u8, timestamp: 0 });
                }
            }
        }
        RatingDataset::from_records(&recs).unwrap()
    }

    #[test]
    fn improvement_of_reference_pair() {
        assert_abs_diff_eq!(improvement(3.018, 2.634), 0.1458, epsilon = 1e-4);
    }

    #[test]
    fn oracle_policy_on_task_one_scores_top_ratings() {
        let ds = world();
        // the user's own highest ratings, first come first
        struct Oracle<'a>(&'a RatingDataset, UserIndex);
        impl Policy for Oracle<'_> {
            fn name(&self) -> &str {
                "oracle"
            }
            fn begin_episode(&mut self, ctx: &EpisodeContext) -> Result<()> {
                self.1 = ctx.user;
                Ok(())
            }
            fn act(&mut self, mask: &crate::env::ActionMask) -> Result<usize> {
                let r: Vec<f64> = (0..self.0.num_items()).map(|i| self.0.rating(self.1, i).unwrap_or(0) as f64).collect();
                crate::qnet::masked_argmax(&r, mask.iter()).ok_or(Error::EmptyMask)
            }
            fn observe(&mut self, _: usize, _: f64) -> Result<()> {
                Ok(())
            }
        }
        let users = [0, 5];
        let scores = evaluate_policy(&mut Oracle(&ds, 0), &ds, &users, TaskMode::TaskI, 5, 0).unwrap();
        for (&u, s) in users.iter().zip(&scores) {
            let mut r = ds.user_ratings(u).to_vec();
            r.sort_unstable_by(|a, b| b.cmp(a));
            let top: f64 = r[..5].iter().map(|&x| x as f64).sum::<f64>() / 5.0;
            assert_abs_diff_eq!(*s, top);
        }
    }

    #[test]
    fn random_evaluation_is_reproducible_and_order_free() {
        let ds = world();
        let a = evaluate_policy(&mut RandomPolicy::new(), &ds, &[1, 2, 3], TaskMode::TaskII, 10, 9).unwrap();
        let b = evaluate_policy(&mut RandomPolicy::new(), &ds, &[3, 2, 1], TaskMode::TaskII, 10, 9).unwrap();
        assert_eq!(a, vec![b[2], b[1], b[0]]);
    }

    #[test]
    fn compare_ranks_and_tests() {
        let results = vec![
            EvalResult::new("A", TaskMode::TaskII, "d", vec![3.0, 3.1, 2.9, 3.05]),
            EvalResult::new("B", TaskMode::TaskII, "d", vec![2.6, 2.7, 2.6, 2.65]),
            EvalResult::new("C", TaskMode::TaskII, "d", vec![1.0, 1.1, 1.0, 1.0]),
            EvalResult::new("A", TaskMode::TaskI, "d", vec![4.0, 4.0]),
        ];
        let c = compare(&results);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].best.as_str(), c[0].second.as_str()), ("A", "B"));
        assert_abs_diff_eq!(c[0].improvement, (3.0125 - 2.6375) / 2.6375, epsilon = 1e-12);
        assert!(c[0].p_value.unwrap() < 0.01);
    }

    #[test]
    fn split_run_records_failures_per_cell() {
        let ds = world();
        let split = Split { train_users: vec![0, 1, 2, 3, 4, 5, 6, 7], test_users: vec![8, 9], seed: 3 };
        let cfg = BenchmarkConfig {
            mf: MfConfig { d: 0, ..MfConfig::default() },
            train: TrainConfig { episodes: 2, horizon: 5, batch_size: 4, hidden: vec![4], ..TrainConfig::default() },
            ..BenchmarkConfig::default()
        };
        let out = run_split(&ds, &split, 0, &[Method::Random, Method::Mf, Method::Dqn], &[TaskMode::TaskII], &cfg);
        assert_eq!(out.len(), 3);
        assert!(out[0].score.is_ok());
        assert!(out[1].score.is_err());
        assert!(out[2].score.is_ok());
        let agg = aggregate(&out, "toy");
        assert!(agg[0].mean.is_finite());
        assert!(agg[1].mean.is_nan());
    }
}
