//! The episodic recommendation MDP over one user's logged ratings.
//!
//! An episode lasts `horizon` steps. At each step the agent recommends an item
//! it has not recommended before, receives the user's logged rating as reward
//! (or 0 for an unrated item in [`TaskMode::TaskII`]) and the user's latent
//! state is advanced by one online MF update on that reward.

use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::dataset::{ItemIndex, RatingDataset, UserIndex};
use crate::error::{Error, Result};
use crate::mf::{MfModel, OnlineStep, UserLatentState};

/// Treatment of items the user never rated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TaskMode {
    /// Only the user's rated items can be recommended.
    #[cfg_attr(feature = "serde", serde(rename = "task1", alias = "TaskI"))]
    TaskI,
    /// Every item can be recommended; unrated items pay 0.
    #[cfg_attr(feature = "serde", serde(rename = "task2", alias = "TaskII"))]
    TaskII,
}

impl TaskMode {
    pub fn label(self) -> &'static str {
        match self {
            TaskMode::TaskI => "task1",
            TaskMode::TaskII => "task2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "task1" | "taski" | "i" | "1" => Some(TaskMode::TaskI),
            "task2" | "taskii" | "ii" | "2" => Some(TaskMode::TaskII),
            _ => None,
        }
    }
}

/// Which observation a learning agent is fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StateKind {
    /// The d-dimensional latent user vector.
    Cf,
    /// The n-dimensional vector of ratings observed so far.
    Raw,
}

/// Sparse real vector; entries are kept in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = v;
        }
        out
    }

    pub fn get(&self, index: usize) -> f64 {
        self.indices.iter().position(|&i| i as usize == index).map_or(0.0, |k| self.values[k])
    }
}

/// A state as seen by a function approximator.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Dense(Vec<f64>),
    Sparse(SparseVector),
}

impl Observation {
    pub fn dim(&self) -> usize {
        match self {
            Observation::Dense(v) => v.len(),
            Observation::Sparse(s) => s.dim,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            Observation::Dense(v) => v.clone(),
            Observation::Sparse(s) => s.to_dense(),
        }
    }
}

/// Set of currently available actions with O(1) membership, removal and
/// indexed access. Iteration order is unspecified but deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMask {
    items: Vec<u32>,
    pos: Vec<u32>,
}

const ABSENT: u32 = u32::MAX;

impl ActionMask {
    /// Every action in `0..n`.
    pub fn all(n: usize) -> Self {
        Self { items: (0..n as u32).collect(), pos: (0..n as u32).collect() }
    }

    /// The given actions out of a universe of size `n`. Duplicates are ignored.
    pub fn from_items(n: usize, items: &[u32]) -> Self {
        let mut mask = Self { items: Vec::with_capacity(items.len()), pos: alloc::vec![ABSENT; n] };
        for &i in items {
            if mask.pos[i as usize] == ABSENT {
                mask.pos[i as usize] = mask.items.len() as u32;
                mask.items.push(i);
            }
        }
        mask
    }

    pub fn universe(&self) -> usize {
        self.pos.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: usize) -> bool {
        item < self.pos.len() && self.pos[item] != ABSENT
    }

    /// Removes `item`; returns whether it was present.
    pub fn remove(&mut self, item: usize) -> bool {
        if !self.contains(item) {
            return false;
        }
        let k = self.pos[item] as usize;
        let last = *self.items.last().unwrap_or_else(|| unreachable!());
        self.items.swap_remove(k);
        if last as usize != item {
            self.pos[last as usize] = k as u32;
        }
        self.pos[item] = ABSENT;
        true
    }

    /// The `k`-th available action in iteration order.
    pub fn get(&self, k: usize) -> usize {
        self.items[k] as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().map(|&i| i as usize)
    }

    pub fn to_sorted_vec(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.iter().collect();
        v.sort_unstable();
        v
    }
}

/// Initial availability of an episode, shared cheaply between snapshots.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskBase {
    All(usize),
    Items(Arc<[u32]>),
}

/// Compact record of an [`ActionMask`]: the initial set minus the actions
/// taken so far. Stored inside replay transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSnapshot {
    base: MaskBase,
    removed: Vec<u32>,
}

impl MaskSnapshot {
    pub fn new(base: MaskBase, removed: &[u32]) -> Self {
        let mut removed = removed.to_vec();
        removed.sort_unstable();
        removed.dedup();
        Self { base, removed }
    }

    pub fn base(&self) -> &MaskBase {
        &self.base
    }

    pub fn removed(&self) -> &[u32] {
        &self.removed
    }

    pub fn contains(&self, item: usize) -> bool {
        let in_base = match &self.base {
            MaskBase::All(n) => item < *n,
            MaskBase::Items(items) => items.contains(&(item as u32)),
        };
        in_base && self.removed.binary_search(&(item as u32)).is_err()
    }

    /// Available actions, ascending when the base is ascending.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        let base: alloc::boxed::Box<dyn Iterator<Item = u32> + '_> = match &self.base {
            MaskBase::All(n) => alloc::boxed::Box::new(0..*n as u32),
            MaskBase::Items(items) => alloc::boxed::Box::new(items.iter().copied()),
        };
        base.filter(move |i| self.removed.binary_search(i).is_err()).map(|i| i as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.iter().next().is_none()
    }

    pub fn to_mask(&self, universe: usize) -> ActionMask {
        let items: Vec<u32> = self.iter().map(|i| i as u32).collect();
        ActionMask::from_items(universe, &items)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// Minimal episodic interface consumed by the Q-learning trainer.
pub trait Environment {
    /// Current state as fed to a function approximator.
    fn observe(&self) -> Observation;
    fn mask(&self) -> &ActionMask;
    fn mask_snapshot(&self) -> MaskSnapshot;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
    fn is_done(&self) -> bool;
}

/// Turns observed feedback into the latent user state.
#[derive(Debug, Clone, Copy)]
pub struct CfEncoder<'a> {
    pub model: &'a MfModel,
    pub step: OnlineStep,
    /// Also take the item-vector SGD step on an episode-local copy of `V_i`.
    /// Off by default; the shared model is never touched either way.
    pub update_items: bool,
}

impl<'a> CfEncoder<'a> {
    pub fn new(model: &'a MfModel) -> Self {
        Self { model, step: model.online_step(), update_items: false }
    }

    pub fn with_step(model: &'a MfModel, step: OnlineStep) -> Self {
        Self { model, step, update_items: false }
    }
}

/// Static episode parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub task: TaskMode,
    pub horizon: usize,
    pub state_kind: StateKind,
}

/// One user's episode: raw and latent states, available actions, history.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    ds: &'a RatingDataset,
    encoder: Option<CfEncoder<'a>>,
    cfg: EnvConfig,
    user: UserIndex,
    t: usize,
    actions: Vec<u32>,
    rewards: Vec<f64>,
    cf_state: Option<UserLatentState>,
    item_overrides: Vec<(u32, Vec<f64>)>,
    mask: ActionMask,
    base: MaskBase,
}

/// Starts an episode for `user` with latent states from `model`'s own online
/// step parameters.
pub fn reset<'a>(
    ds: &'a RatingDataset,
    model: &'a MfModel,
    user: UserIndex,
    task: TaskMode,
    horizon: usize,
) -> Result<Episode<'a>> {
    Episode::new(ds, Some(CfEncoder::new(model)), user, EnvConfig { task, horizon, state_kind: StateKind::Cf })
}

impl<'a> Episode<'a> {
    pub fn new(ds: &'a RatingDataset, encoder: Option<CfEncoder<'a>>, user: UserIndex, cfg: EnvConfig) -> Result<Self> {
        if user >= ds.num_users() {
            return Err(Error::InvalidArgument(format!("user index {user} out of range")));
        }
        if let Some(enc) = &encoder {
            if enc.model.num_items() != ds.num_items() {
                return Err(Error::ShapeMismatch { expected: ds.num_items(), got: enc.model.num_items() });
            }
        }
        if cfg.state_kind == StateKind::Cf && encoder.is_none() {
            return Err(Error::InvalidArgument("latent states need an MF encoder".to_string()));
        }
        let n = ds.num_items();
        let (mask, base) = match cfg.task {
            TaskMode::TaskI => {
                let rated = ds.user_items(user);
                if rated.len() < cfg.horizon {
                    return Err(Error::InvalidArgument(format!(
                        "user {} rated {} items, fewer than the horizon {}",
                        ds.user_id(user),
                        rated.len(),
                        cfg.horizon
                    )));
                }
                (ActionMask::from_items(n, rated), MaskBase::Items(Arc::from(rated)))
            }
            TaskMode::TaskII => {
                if n < cfg.horizon {
                    return Err(Error::InvalidArgument("fewer items than the horizon".to_string()));
                }
                (ActionMask::all(n), MaskBase::All(n))
            }
        };
        let cf_state = match &encoder {
            Some(enc) => Some(UserLatentState::zeros(enc.model.d())?),
            None => None,
        };
        Ok(Self {
            ds,
            encoder,
            cfg,
            user,
            t: 0,
            actions: Vec::with_capacity(cfg.horizon),
            rewards: Vec::with_capacity(cfg.horizon),
            cf_state,
            item_overrides: Vec::new(),
            mask,
            base,
        })
    }

    pub fn user(&self) -> UserIndex {
        self.user
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub fn task(&self) -> TaskMode {
        self.cfg.task
    }

    pub fn num_items(&self) -> usize {
        self.ds.num_items()
    }

    pub fn done(&self) -> bool {
        self.t >= self.cfg.horizon
    }

    pub fn available_actions(&self) -> &ActionMask {
        &self.mask
    }

    pub fn cf_state(&self) -> Option<&UserLatentState> {
        self.cf_state.as_ref()
    }

    /// Observed rewards so far by item (the zero-valued misses of TaskII are
    /// left out; see [`Self::asked`] for every recommended item).
    pub fn raw_state(&self) -> SparseVector {
        let mut s = SparseVector { dim: self.ds.num_items(), ..SparseVector::default() };
        for (&a, &r) in self.actions.iter().zip(&self.rewards) {
            if r != 0.0 {
                s.indices.push(a);
                s.values.push(r);
            }
        }
        s
    }

    /// Items recommended so far, in order.
    pub fn asked(&self) -> &[u32] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn step(&mut self, action: ItemIndex) -> Result<StepOutcome> {
        if self.done() {
            return Err(Error::EpisodeDone);
        }
        if !self.mask.contains(action) {
            return Err(Error::IllegalAction(action));
        }
        let reward = match self.ds.rating(self.user, action) {
            Some(r) => f64::from(r),
            None if self.cfg.task == TaskMode::TaskII => 0.0,
            None => return Err(Error::IllegalAction(action)),
        };
        if let (Some(enc), Some(state)) = (&self.encoder, &self.cf_state) {
            let item_vec = self
                .item_overrides
                .iter()
                .find(|(i, _)| *i as usize == action)
                .map_or_else(|| enc.model.item_vector(action), |(_, v)| v.as_slice());
            let next = enc.step.user_update(state.as_slice(), item_vec, reward)?;
            if enc.update_items {
                let v = enc.step.item_update(state.as_slice(), item_vec, reward)?;
                self.item_overrides.retain(|(i, _)| *i as usize != action);
                self.item_overrides.push((action as u32, v));
            }
            self.cf_state = Some(UserLatentState::from_vec(next));
        }
        self.mask.remove(action);
        self.actions.push(action as u32);
        self.rewards.push(reward);
        self.t += 1;
        Ok(StepOutcome { reward, done: self.done() })
    }
}

impl Environment for Episode<'_> {
    fn observe(&self) -> Observation {
        match self.cfg.state_kind {
            StateKind::Cf => Observation::Dense(
                self.cf_state.as_ref().map(|s| s.as_slice().to_vec()).unwrap_or_default(),
            ),
            StateKind::Raw => Observation::Sparse(self.raw_state()),
        }
    }

    fn mask(&self) -> &ActionMask {
        &self.mask
    }

    fn mask_snapshot(&self) -> MaskSnapshot {
        MaskSnapshot::new(self.base.clone(), &self.actions)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        Episode::step(self, action)
    }

    fn is_done(&self) -> bool {
        self.done()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RatingRecord;
    use crate::mf::{pretrain, MfConfig};
    use alloc::vec;
    use proptest::prelude::*;

    fn toy() -> (RatingDataset, MfModel) {
        // 4 users x 8 items; user u rates items u..u+5
        let mut recs = vec![];
        for u in 0..4u64 {
            for i in u..u + 5 {
                recs.push(RatingRecord { user: u, item: i, rating: ((u * 3 + i) % 5 + 1) as u8, timestamp: 0 });
            }
        }
        let ds = RatingDataset::from_records(&recs).unwrap();
        let (model, _) = pretrain(&ds, &[0, 1, 2, 3], &MfConfig { d: 3, epochs: 20, ..MfConfig::default() }, 1).unwrap();
        (ds, model)
    }

    #[test]
    fn mask_remove_and_contains() {
        let mut m = ActionMask::all(5);
        assert!(m.remove(2));
        assert!(!m.remove(2));
        assert!(!m.contains(2));
        assert_eq!(m.len(), 4);
        assert_eq!(m.to_sorted_vec(), vec![0, 1, 3, 4]);
        assert!(m.remove(4));
        assert!(m.remove(0));
        assert_eq!(m.to_sorted_vec(), vec![1, 3]);
        assert!(!m.contains(17));
        let m = ActionMask::from_items(6, &[5, 1, 5]);
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn snapshot_matches_live_mask() {
        let snap = MaskSnapshot::new(MaskBase::Items(Arc::from(&[1u32, 4, 6, 7][..])), &[6, 1]);
        assert_eq!(snap.iter().collect::<Vec<_>>(), vec![4, 7]);
        assert!(snap.contains(4) && !snap.contains(6) && !snap.contains(0));
        assert_eq!(snap.to_mask(8).to_sorted_vec(), vec![4, 7]);
        let all = MaskSnapshot::new(MaskBase::All(3), &[0, 1, 2]);
        assert!(all.is_empty());
    }

    #[test]
    fn reset_initial_state() {
        let (ds, model) = toy();
        let ep = reset(&ds, &model, 1, TaskMode::TaskII, 3).unwrap();
        assert_eq!(ep.available_actions().len(), ds.num_items());
        assert_eq!(ep.cf_state().unwrap().as_slice(), &[0.0; 3]);
        assert!(ep.raw_state().indices.is_empty());
        let ep = reset(&ds, &model, 1, TaskMode::TaskI, 5).unwrap();
        assert_eq!(ep.available_actions().to_sorted_vec(), ds.user_items(1).iter().map(|&i| i as usize).collect::<Vec<_>>());
        assert!(reset(&ds, &model, 1, TaskMode::TaskI, 6).is_err());
        assert!(reset(&ds, &model, 9, TaskMode::TaskI, 1).is_err());
    }

    #[test]
    fn reward_is_logged_rating_or_zero() {
        let (ds, model) = toy();
        let mut ep = reset(&ds, &model, 0, TaskMode::TaskII, 3).unwrap();
        let item = ds.user_items(0)[2] as usize;
        let out = ep.step(item).unwrap();
        assert_eq!(out.reward, f64::from(ds.rating(0, item).unwrap()));
        let unrated = (0..ds.num_items()).find(|&i| ds.rating(0, i).is_none()).unwrap();
        assert_eq!(ep.step(unrated).unwrap().reward, 0.0);
        assert_eq!(ep.raw_state().indices, vec![item as u32]);
        assert_eq!(ep.asked(), &[item as u32, unrated as u32]);
        assert!(matches!(ep.step(item), Err(Error::IllegalAction(_))));
        assert!(ep.step(7).unwrap().done);
        assert_eq!(ep.step(6), Err(Error::EpisodeDone));
    }

    #[test]
    fn task_one_rejects_unrated_items() {
        let (ds, model) = toy();
        let mut ep = reset(&ds, &model, 0, TaskMode::TaskI, 3).unwrap();
        assert_eq!(ep.step(7), Err(Error::IllegalAction(7)));
    }

    #[test]
    fn first_update_matches_closed_form() {
        let (ds, model) = toy();
        let mut ep = reset(&ds, &model, 2, TaskMode::TaskI, 1).unwrap();
        let item = ds.user_items(2)[0] as usize;
        let r = ep.step(item).unwrap().reward;
        let expect: Vec<f64> = model.item_vector(item).iter().map(|v| 2.0 * model.alpha() * r * v).collect();
        assert_eq!(ep.cf_state().unwrap().as_slice(), &expect[..]);
    }

    #[test]
    fn item_updates_stay_episode_local() {
        let (ds, model) = toy();
        let before = model.clone();
        let mut enc = CfEncoder::new(&model);
        enc.update_items = true;
        let cfg = EnvConfig { task: TaskMode::TaskII, horizon: 4, state_kind: StateKind::Cf };
        let mut ep = Episode::new(&ds, Some(enc), 0, cfg).unwrap();
        for a in [0, 1, 2, 3] {
            ep.step(a).unwrap();
        }
        assert_eq!(model, before);
        let mut plain = Episode::new(&ds, Some(CfEncoder::new(&model)), 0, cfg).unwrap();
        for a in [0, 1, 2, 3] {
            plain.step(a).unwrap();
        }
        assert_eq!(ep.rewards(), plain.rewards());
    }

    #[test]
    fn rated_enumeration_sums_all_ratings() {
        let (ds, model) = toy();
        for u in 0..ds.num_users() {
            let k = ds.user_degree(u);
            let mut ep = reset(&ds, &model, u, TaskMode::TaskI, k).unwrap();
            let mut items: Vec<usize> = ds.user_items(u).iter().rev().map(|&i| i as usize).collect();
            items.rotate_left(2);
            let total: f64 = items.iter().map(|&i| ep.step(i).unwrap().reward).sum();
            let expect: f64 = ds.user_ratings(u).iter().map(|&r| f64::from(r)).sum();
            assert_eq!(total, expect);
        }
    }

    proptest! {
        #[test]
        fn episode_invariants(seed in any::<u64>(), task_two in any::<bool>(), user in 0usize..4) {
            use rand::{Rng, SeedableRng};
            let (ds, model) = toy();
            let task = if task_two { TaskMode::TaskII } else { TaskMode::TaskI };
            let horizon = 5;
            let mut ep = reset(&ds, &model, user, task, horizon).unwrap();
            let initial = ep.available_actions().len();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut taken = vec![];
            let mut snapshot = None;
            while !ep.done() {
                if ep.t() == 2 {
                    snapshot = Some(ep.clone());
                }
                let mask = ep.available_actions();
                let a = mask.get(rng.random_range(0..mask.len()));
                let out = ep.step(a).unwrap();
                taken.push(a);
                prop_assert_eq!(ep.available_actions().len(), initial - ep.t());
                prop_assert!(!ep.available_actions().contains(a));
                match task {
                    TaskMode::TaskI => prop_assert!((1.0..=5.0).contains(&out.reward)),
                    TaskMode::TaskII => {
                        prop_assert!((0.0..=5.0).contains(&out.reward));
                        if ds.rating(user, a).is_none() {
                            prop_assert_eq!(out.reward, 0.0);
                        }
                    }
                }
            }
            let mut dedup = taken.clone();
            dedup.sort_unstable();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), taken.len());

            // replaying the suffix from a mid-episode snapshot reproduces the trajectory bit-for-bit
            let mut replay = snapshot.unwrap();
            for &a in &taken[2..] {
                replay.step(a).unwrap();
            }
            prop_assert_eq!(replay.cf_state(), ep.cf_state());
            prop_assert_eq!(replay.rewards(), ep.rewards());
        }
    }
}
