//! One item rated 5 by every user; trained agents must recommend it first to
//! a user they know nothing about.

use cfrl_core::agent::{train_cfrl, TrainConfig};
use cfrl_core::baselines::{train_raw_dqn, EpisodeContext, Policy, QPolicy};
use cfrl_core::dataset::{RatingDataset, RatingRecord, Split};
use cfrl_core::env::{ActionMask, TaskMode};
use cfrl_core::mf::{pretrain, MfConfig};

const PLANTED: u64 = 3;

fn dataset() -> RatingDataset {
    let mut records = Vec::new();
    for u in 0..5u64 {
        for i in 0..6u64 {
            let rating = if i == PLANTED {
                5
            } else if (u + i) % 3 == 0 {
                continue;
            } else {
                1 + ((u * 2 + i) % 3) as u8
            };
            records.push(RatingRecord { user: u, item: i, rating, timestamp: 0 });
        }
    }
    RatingDataset::from_records(&records).unwrap()
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        episodes: 2000,
        horizon: 3,
        task: TaskMode::TaskII,
        gamma: 0.5,
        q_alpha: 0.01,
        hidden: vec![16],
        sync_period: 50,
        seed,
        ..TrainConfig::default()
    }
}

fn first_pick(policy: &mut dyn Policy, n: usize) -> usize {
    policy.begin_episode(&EpisodeContext { user: usize::MAX, num_items: n, seed: 0 }).unwrap();
    policy.act(&ActionMask::all(n)).unwrap()
}

fn split(ds: &RatingDataset) -> Split {
    let users: Vec<usize> = (0..ds.num_users()).collect();
    Split { seed: 1, train_users: users.clone(), test_users: users }
}

#[test]
fn cfrl_recommends_the_planted_item_first() {
    let ds = dataset();
    let split = split(&ds);
    for seed in 0..3 {
        let cfg = config(seed);
        let (model, _) = pretrain(&ds, &split.train_users, &MfConfig { d: 2, ..MfConfig::default() }, seed).unwrap();
        let (net, _) = train_cfrl(&ds, &split, &model, &cfg).unwrap();
        let mut policy = QPolicy::cf("CFRL", &net, &model, cfg.online_step()).unwrap();
        assert_eq!(first_pick(&mut policy, ds.num_items()), ds.item_index(PLANTED).unwrap(), "seed {seed}");
    }
}

#[test]
fn raw_dqn_recommends_the_planted_item_first() {
    let ds = dataset();
    let split = split(&ds);
    for seed in 0..3 {
        let (net, _) = train_raw_dqn(&ds, &split, &config(seed)).unwrap();
        let mut policy = QPolicy::raw("DQN", &net).unwrap();
        assert_eq!(first_pick(&mut policy, ds.num_items()), ds.item_index(PLANTED).unwrap(), "seed {seed}");
    }
}
