//! Q-learning over episodic environments: replay memory, ε-greedy action
//! selection and the training loop.
//!
//! Each training episode picks a user uniformly at random (with replacement),
//! rolls the environment forward for its horizon with ε-greedy actions, stores
//! every transition in a bounded FIFO replay memory and performs one minibatch
//! update per environment step. The target network is refreshed every
//! `sync_period` updates.

use alloc::collections::VecDeque;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{RatingDataset, Split, UserIndex};
use crate::env::{
    ActionMask, CfEncoder, EnvConfig, Environment, Episode, MaskSnapshot, Observation, StateKind, TaskMode,
};
use crate::error::{Error, Result};
use crate::mf::{MfModel, OnlineStep};
use crate::qnet::{masked_argmax, Activation, Features, QNetwork, TargetNetwork};
use crate::seed;

/// `(s_t, a_t, r_{t+1}, s_{t+1})` plus the terminal flag and the actions
/// available in `s_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
    pub next_mask: MaskSnapshot,
}

/// Bounded FIFO of transitions; the oldest is evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMemory {
    buf: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be at least 1".to_string()));
        }
        Ok(Self { buf: VecDeque::new(), capacity })
    }

    pub fn push(&mut self, tr: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(tr);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buf.iter()
    }

    /// Uniform minibatch: with replacement while the memory holds fewer than
    /// `batch` transitions, without replacement otherwise.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.buf.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let len = self.buf.len();
        if len < batch {
            Ok((0..batch).map(|_| &self.buf[rng.random_range(0..len)]).collect())
        } else {
            Ok(rand::seq::index::sample(rng, len, batch).into_iter().map(|k| &self.buf[k]).collect())
        }
    }
}

/// ε-greedy choice: with probability ε a uniform action from `mask`,
/// otherwise the highest-valued available action (lowest index on ties).
pub fn select_action<R: Rng + ?Sized>(
    net: &QNetwork,
    state: Features<'_>,
    mask: &ActionMask,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if rng.random::<f64>() < epsilon {
        return Ok(mask.get(rng.random_range(0..mask.len())));
    }
    let q = net.forward(state)?;
    masked_argmax(&q, mask.iter()).ok_or(Error::EmptyMask)
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    /// Number of episodes K.
    pub episodes: usize,
    /// Horizon T.
    pub horizon: usize,
    pub gamma: f64,
    pub epsilon: f64,
    /// When set, ε decays linearly from `epsilon` to this value over
    /// `epsilon_decay_episodes` episodes and stays there.
    pub epsilon_final: Option<f64>,
    pub epsilon_decay_episodes: usize,
    /// Q-network learning rate.
    pub q_alpha: f64,
    /// Online MF step used to advance latent states.
    pub mf_alpha: f64,
    pub mf_lambda: f64,
    /// Target sync period L, in train steps.
    pub sync_period: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub task: TaskMode,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Root of the trainer's random streams. Not serialized: run
    /// configurations derive it from their top-level seed.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 20_000,
            horizon: 40,
            gamma: 0.9,
            epsilon: 0.1,
            epsilon_final: None,
            epsilon_decay_episodes: 0,
            q_alpha: 0.001,
            mf_alpha: 0.01,
            mf_lambda: 0.01,
            sync_period: 500,
            batch_size: 32,
            replay_capacity: 100_000,
            task: TaskMode::TaskII,
            hidden: alloc::vec![64],
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) || self.epsilon_final.is_some_and(|e| !(0.0..=1.0).contains(&e)) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.q_alpha > 0.0 && self.mf_alpha > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.mf_lambda < 0.0 {
            return bad("mf_lambda must be >= 0");
        }
        if self.sync_period == 0 || self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("sync_period, batch_size and replay_capacity must be at least 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be at least 1");
        }
        Ok(())
    }

    /// ε in effect during the 0-based `episode`.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        match self.epsilon_final {
            Some(end) if self.epsilon_decay_episodes > 0 => {
                let frac = (episode as f64 / self.epsilon_decay_episodes as f64).min(1.0);
                self.epsilon + (end - self.epsilon) * frac
            }
            Some(end) => end,
            None => self.epsilon,
        }
    }

    pub fn online_step(&self) -> OnlineStep {
        OnlineStep { alpha: self.mf_alpha, lambda: self.mf_lambda }
    }

    pub fn layer_sizes(&self, input: usize, actions: usize) -> Vec<usize> {
        let mut s = alloc::vec![input];
        s.extend_from_slice(&self.hidden);
        s.push(actions);
        s
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    /// Episode label supplied by the source (the user index for
    /// recommendation episodes).
    pub user: usize,
    pub reward_sum: f64,
    pub mean_td_loss: f64,
    pub epsilon: f64,
    /// Cumulative number of target syncs at the end of the episode.
    pub sync_count: usize,
}

/// One environment step as seen by the trainer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    pub user: usize,
    pub t: usize,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

/// Supplier of training episodes.
pub trait EpisodeSource {
    type Env<'e>: Environment
    where
        Self: 'e;

    fn input_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Starts a fresh episode, returning its label and environment.
    fn start<'e>(&'e self, rng: &mut ChaCha8Rng) -> Result<(usize, Self::Env<'e>)>;
}

/// Episodes over uniformly sampled users of a rating dataset.
#[derive(Debug, Clone)]
pub struct UserEpisodes<'a> {
    pub ds: &'a RatingDataset,
    pub users: &'a [UserIndex],
    pub encoder: Option<CfEncoder<'a>>,
    pub env: EnvConfig,
}

impl<'a> EpisodeSource for UserEpisodes<'a> {
    type Env<'e>
        = Episode<'a>
    where
        Self: 'e;

    fn input_dim(&self) -> usize {
        match self.env.state_kind {
            StateKind::Cf => self.encoder.map_or(0, |e| e.model.d()),
            StateKind::Raw => self.ds.num_items(),
        }
    }

    fn num_actions(&self) -> usize {
        self.ds.num_items()
    }

    fn start<'e>(&'e self, rng: &mut ChaCha8Rng) -> Result<(usize, Episode<'a>)> {
        if self.users.is_empty() {
            return Err(Error::InvalidArgument("no training users".to_string()));
        }
        let user = self.users[rng.random_range(0..self.users.len())];
        Ok((user, Episode::new(self.ds, self.encoder, user, self.env)?))
    }
}

/// Serializable state of a ChaCha generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to continue an interrupted training run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub net: QNetwork,
    pub target: QNetwork,
    pub target_staleness: usize,
    pub memory: ReplayMemory,
    pub user_rng: RngState,
    pub explore_rng: RngState,
    pub replay_rng: RngState,
    pub train_steps: usize,
    pub sync_count: usize,
    pub log: Vec<EpisodeLog>,
}

/// Deep Q-learning with replay memory and a target network.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    net: QNetwork,
    target: TargetNetwork,
    memory: ReplayMemory,
    user_rng: ChaCha8Rng,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    train_steps: usize,
    sync_count: usize,
    log: Vec<EpisodeLog>,
}

impl Trainer {
    /// Fresh trainer with a seeded network of sizes `[input, hidden.., actions]`.
    pub fn new(cfg: TrainConfig, input_dim: usize, num_actions: usize) -> Result<Self> {
        cfg.validate()?;
        let sizes = cfg.layer_sizes(input_dim, num_actions);
        let net = QNetwork::new(&sizes, cfg.activation, seed::derive(cfg.seed, "qnet-init"))?;
        Self::with_network(cfg, net)
    }

    /// Fresh trainer around an existing network.
    pub fn with_network(cfg: TrainConfig, net: QNetwork) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            target: TargetNetwork::new(&net),
            net,
            memory: ReplayMemory::new(cfg.replay_capacity)?,
            user_rng: seed::rng(cfg.seed, "episode-users"),
            explore_rng: seed::rng(cfg.seed, "epsilon-greedy"),
            replay_rng: seed::rng(cfg.seed, "replay-sampling"),
            train_steps: 0,
            sync_count: 0,
            log: Vec::new(),
            cfg,
        })
    }

    pub fn resume(cfg: TrainConfig, state: TrainerState) -> Result<Self> {
        cfg.validate()?;
        if !state.net.same_architecture(&state.target) {
            return Err(Error::ArchitectureMismatch);
        }
        Ok(Self {
            target: TargetNetwork::from_parts(state.target, state.target_staleness),
            net: state.net,
            memory: state.memory,
            user_rng: state.user_rng.restore(),
            explore_rng: state.explore_rng.restore(),
            replay_rng: state.replay_rng.restore(),
            train_steps: state.train_steps,
            sync_count: state.sync_count,
            log: state.log,
            cfg,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            net: self.net.clone(),
            target: self.target.network().clone(),
            target_staleness: self.target.staleness(),
            memory: self.memory.clone(),
            user_rng: RngState::capture(&self.user_rng),
            explore_rng: RngState::capture(&self.explore_rng),
            replay_rng: RngState::capture(&self.replay_rng),
            train_steps: self.train_steps,
            sync_count: self.sync_count,
            log: self.log.clone(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    pub fn into_network(self) -> QNetwork {
        self.net
    }

    pub fn target(&self) -> &TargetNetwork {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn log(&self) -> &[EpisodeLog] {
        &self.log
    }

    pub fn episodes_done(&self) -> usize {
        self.log.len()
    }

    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    pub fn sync_count(&self) -> usize {
        self.sync_count
    }

    /// Runs episodes until `cfg.episodes` have completed in total.
    pub fn run<S: EpisodeSource>(&mut self, source: &S) -> Result<()> {
        self.run_for(source, usize::MAX)
    }

    /// Runs at most `max_episodes` more episodes (never beyond `cfg.episodes`).
    pub fn run_for<S: EpisodeSource>(&mut self, source: &S, max_episodes: usize) -> Result<()> {
        self.run_traced(source, max_episodes, |_| {})
    }

    /// [`Trainer::run_for`] that reports every environment step to `on_step`.
    pub fn run_traced<S: EpisodeSource>(
        &mut self,
        source: &S,
        max_episodes: usize,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<()> {
        if source.input_dim() != self.net.input_dim() {
            return Err(Error::ShapeMismatch { expected: self.net.input_dim(), got: source.input_dim() });
        }
        if source.num_actions() != self.net.output_dim() {
            return Err(Error::ShapeMismatch { expected: self.net.output_dim(), got: source.num_actions() });
        }
        let stop = self.cfg.episodes.min(self.log.len().saturating_add(max_episodes));
        while self.log.len() < stop {
            self.run_episode(source, &mut on_step)?;
        }
        Ok(())
    }

    fn run_episode<S: EpisodeSource>(&mut self, source: &S, on_step: &mut impl FnMut(&StepRecord)) -> Result<()> {
        let episode = self.log.len();
        let epsilon = self.cfg.epsilon_at(episode);
        let (user, mut env) = source.start(&mut self.user_rng)?;
        let mut state = env.observe();
        let (mut reward_sum, mut loss_sum, mut updates) = (0.0, 0.0, 0usize);
        let mut t = 0;
        while !env.is_done() {
            let action = select_action(&self.net, Features::from(&state), env.mask(), epsilon, &mut self.explore_rng)?;
            let out = env.step(action)?;
            on_step(&StepRecord { episode, user, t, action, reward: out.reward, done: out.done });
            t += 1;
            let next_state = env.observe();
            reward_sum += out.reward;
            self.memory.push(Transition {
                state,
                action,
                reward: out.reward,
                next_state: next_state.clone(),
                done: out.done,
                next_mask: env.mask_snapshot(),
            });
            loss_sum += self.update()?;
            updates += 1;
            state = next_state;
        }
        self.log.push(EpisodeLog {
            episode,
            user,
            reward_sum,
            mean_td_loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 },
            epsilon,
            sync_count: self.sync_count,
        });
        Ok(())
    }

    fn update(&mut self) -> Result<f64> {
        let batch = self.memory.sample(self.cfg.batch_size, &mut self.replay_rng)?;
        let loss = self.net.train_step(&self.target, &batch, self.cfg.gamma, self.cfg.q_alpha)?;
        self.train_steps += 1;
        self.target.tick();
        if self.target.staleness() >= self.cfg.sync_period {
            self.target.sync(&self.net)?;
            self.sync_count += 1;
        }
        Ok(loss)
    }
}

/// Trains a Q-network on latent (MF) states of the split's training users.
pub fn train_cfrl(ds: &RatingDataset, split: &Split, model: &MfModel, cfg: &TrainConfig) -> Result<(QNetwork, Vec<EpisodeLog>)> {
    let source = UserEpisodes {
        ds,
        users: &split.train_users,
        encoder: Some(CfEncoder::with_step(model, cfg.online_step())),
        env: EnvConfig { task: cfg.task, horizon: cfg.horizon, state_kind: StateKind::Cf },
    };
    let mut trainer = Trainer::new(cfg.clone(), model.d(), ds.num_items())?;
    trainer.run(&source)?;
    let log = trainer.log().to_vec();
    Ok((trainer.into_network(), log))
}

/// Greedy rollout of `net` for one user; returns the per-step rewards.
pub fn run_episode_greedy(
    net: &QNetwork,
    ds: &RatingDataset,
    encoder: CfEncoder<'_>,
    user: UserIndex,
    task: TaskMode,
    horizon: usize,
) -> Result<Vec<f64>> {
    let mut ep = Episode::new(ds, Some(encoder), user, EnvConfig { task, horizon, state_kind: StateKind::Cf })?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while !ep.done() {
        let obs = ep.observe();
        let a = select_action(net, Features::from(&obs), ep.available_actions(), 0.0, &mut rng)?;
        ep.step(a)?;
    }
    Ok(ep.rewards().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MaskBase;
    use crate::mf::MfConfig;
    use alloc::vec;

    fn tr(tag: f64) -> Transition {
        Transition {
            state: Observation::Dense(vec![tag]),
            action: 0,
            reward: tag,
            next_state: Observation::Dense(vec![tag]),
            done: true,
            next_mask: MaskSnapshot::new(MaskBase::All(1), &[]),
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut m = ReplayMemory::new(2).unwrap();
        for k in 0..3 {
            m.push(tr(k as f64));
        }
        let kept: Vec<f64> = m.iter().map(|t| t.reward).collect();
        assert_eq!(kept, vec![1.0, 2.0]);
        assert!(ReplayMemory::new(0).is_err());
    }

    #[test]
    fn sampling_small_memory_repeats() {
        let mut m = ReplayMemory::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(m.sample(1, &mut rng), Err(Error::EmptyMemory));
        m.push(tr(7.0));
        assert_eq!(m.sample(1, &mut rng).unwrap()[0].reward, 7.0);
        let b = m.sample(4, &mut rng).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|t| t.reward == 7.0));
    }

    #[test]
    fn sampling_without_replacement_and_reproducible() {
        let mut m = ReplayMemory::new(50).unwrap();
        for k in 0..20 {
            m.push(tr(k as f64));
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            m.sample(10, &mut rng).unwrap().iter().map(|t| t.reward as u32).collect::<Vec<_>>()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        let mut d = a.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 10);
    }

    #[test]
    fn capacity_holds_under_random_pushes() {
        let mut m = ReplayMemory::new(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1_000_000 {
            if rng.random::<f64>() < 0.9 {
                m.push(tr(0.0));
            }
            assert!(m.len() <= 1000);
        }
        assert_eq!(m.len(), 1000);
    }

    #[test]
    fn greedy_and_masked_selection() {
        let net = QNetwork::from_layers(
            vec![crate::qnet::Layer { inputs: 1, outputs: 4, weights: vec![1.0, 3.0, 2.0, 3.0], bias: vec![0.0; 4] }],
            Activation::Relu,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [1.0];
        let mut mask = ActionMask::all(4);
        assert_eq!(select_action(&net, Features::Dense(&x), &mask, 0.0, &mut rng).unwrap(), 1);
        mask.remove(1);
        assert_eq!(select_action(&net, Features::Dense(&x), &mask, 0.0, &mut rng).unwrap(), 3);
        mask.remove(3);
        assert_eq!(select_action(&net, Features::Dense(&x), &mask, 0.0, &mut rng).unwrap(), 2);
        let empty = ActionMask::from_items(4, &[]);
        assert_eq!(select_action(&net, Features::Dense(&x), &empty, 0.0, &mut rng), Err(Error::EmptyMask));
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let net = QNetwork::new(&[1, 6], Activation::Relu, 0).unwrap();
        let mask = ActionMask::from_items(6, &[0, 2, 3, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 6];
        let draws = 100_000;
        for _ in 0..draws {
            counts[select_action(&net, Features::Dense(&[0.5]), &mask, 1.0, &mut rng).unwrap()] += 1;
        }
        for i in [0, 2, 3, 5] {
            assert!((counts[i] as f64 / draws as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
        assert_eq!(counts[1] + counts[4], 0);
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig { epsilon: 0.5, epsilon_final: Some(0.1), epsilon_decay_episodes: 4, ..TrainConfig::default() };
        assert_eq!(cfg.epsilon_at(0), 0.5);
        assert!((cfg.epsilon_at(2) - 0.3).abs() < 1e-12);
        assert!((cfg.epsilon_at(10) - 0.1).abs() < 1e-12);
        assert_eq!(TrainConfig::default().epsilon_at(1000), 0.1);
        assert!(TrainConfig { gamma: 1.5, ..TrainConfig::default() }.validate().is_err());
    }

    fn small_world() -> (RatingDataset, MfModel, Split) {
        let mut recs = vec![];
        for u in 0..6u64 {
            for i in 0..8u64 {
                if (u + i) % 3 != 0 {
                    recs.push(crate::dataset::RatingRecord { user: u, item: i, rating: ((u + 2 * i) % 5 + 1) as u8, timestamp: 0 });
                }
            }
        }
        let ds = RatingDataset::from_records(&recs).unwrap();
        let split = Split { train_users: vec![0, 1, 2, 3, 4], test_users: vec![5], seed: 0 };
        let (model, _) = crate::mf::pretrain(&ds, &split.train_users, &MfConfig { d: 4, epochs: 10, ..MfConfig::default() }, 0).unwrap();
        (ds, model, split)
    }

    #[test]
    fn zero_episodes_leaves_network_untouched() {
        let (ds, model, split) = small_world();
        let cfg = TrainConfig { episodes: 0, horizon: 3, hidden: vec![5], ..TrainConfig::default() };
        let (net, log) = train_cfrl(&ds, &split, &model, &cfg).unwrap();
        let fresh = Trainer::new(cfg, 4, 8).unwrap();
        assert_eq!(&net, fresh.network());
        assert!(log.is_empty());
    }

    #[test]
    fn training_bookkeeping() {
        let (ds, model, split) = small_world();
        let cfg = TrainConfig { episodes: 30, horizon: 4, sync_period: 7, batch_size: 4, hidden: vec![5], seed: 3, ..TrainConfig::default() };
        let source = UserEpisodes {
            ds: &ds,
            users: &split.train_users,
            encoder: Some(CfEncoder::with_step(&model, cfg.online_step())),
            env: EnvConfig { task: TaskMode::TaskII, horizon: 4, state_kind: StateKind::Cf },
        };
        let mut trainer = Trainer::new(cfg.clone(), 4, 8).unwrap();
        let mut max_staleness = 0;
        for _ in 0..cfg.episodes {
            trainer.run_for(&source, 1).unwrap();
            max_staleness = max_staleness.max(trainer.target().staleness());
        }
        assert_eq!(trainer.log().len(), 30);
        assert_eq!(trainer.train_steps(), 120);
        assert_eq!(trainer.sync_count(), 120 / 7);
        assert!(max_staleness < 7);
        assert!(trainer.log().iter().all(|l| split.train_users.contains(&l.user)));
        // no repeated actions inside any stored episode
        let mut in_episode: Vec<usize> = vec![];
        for t in trainer.memory().iter() {
            assert!(!in_episode.contains(&t.action));
            in_episode.push(t.action);
            if t.done {
                in_episode.clear();
            }
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (ds, model, split) = small_world();
        let cfg = TrainConfig { episodes: 12, horizon: 3, sync_period: 5, batch_size: 4, hidden: vec![6], seed: 11, ..TrainConfig::default() };
        let source = UserEpisodes {
            ds: &ds,
            users: &split.train_users,
            encoder: Some(CfEncoder::with_step(&model, cfg.online_step())),
            env: EnvConfig { task: TaskMode::TaskII, horizon: 3, state_kind: StateKind::Cf },
        };
        let mut full = Trainer::new(cfg.clone(), 4, 8).unwrap();
        full.run(&source).unwrap();
        let mut first = Trainer::new(cfg.clone(), 4, 8).unwrap();
        first.run_for(&source, 5).unwrap();
        let mut resumed = Trainer::resume(cfg, first.state()).unwrap();
        resumed.run(&source).unwrap();
        assert_eq!(resumed.network(), full.network());
        assert_eq!(resumed.log(), full.log());
    }

    #[test]
    fn greedy_rollout() {
        let (ds, model, _) = small_world();
        let mut net = QNetwork::new(&[4, 5, 8], Activation::Relu, 0).unwrap();
        let enc = CfEncoder::new(&model);
        assert!(run_episode_greedy(&net, &ds, enc, 5, TaskMode::TaskII, 0).unwrap().is_empty());
        let a = run_episode_greedy(&net, &ds, enc, 5, TaskMode::TaskII, 4).unwrap();
        assert_eq!(a, run_episode_greedy(&net, &ds, enc, 5, TaskMode::TaskII, 4).unwrap());
        for i in 0..net.num_parameters() {
            *net.parameter_mut(i) = 0.0;
        }
        // all-zero network: lowest available index every step
        let r = run_episode_greedy(&net, &ds, enc, 5, TaskMode::TaskII, 4).unwrap();
        let expect: Vec<f64> = (0..4).map(|i| ds.rating(5, i).map_or(0.0, f64::from)).collect();
        assert_eq!(r, expect);
    }
}
