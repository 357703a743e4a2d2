//! Comparison policies behind one interface.
//!
//! A [`Policy`] sees only what a deployed recommender would see: the set of
//! still-available items and the feedback on its own recommendations. Policies
//! that need a latent user state maintain it themselves from that feedback.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{EpisodeLog, Trainer, TrainConfig, UserEpisodes};
use crate::dataset::{ItemIndex, RatingDataset, Split, UserIndex};
use crate::env::{ActionMask, EnvConfig, Episode, SparseVector, StateKind};
use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, spd_inverse};
use crate::mf::{MfModel, OnlineStep, UserLatentState};
use crate::qnet::{masked_argmax, Features, QNetwork};
use crate::seed;

/// Per-episode information handed to a policy before its first action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeContext {
    pub user: UserIndex,
    pub num_items: usize,
    /// Seed for any randomness the policy uses during this episode.
    pub seed: u64,
}

/// A recommendation policy.
pub trait Policy {
    fn name(&self) -> &str;
    fn begin_episode(&mut self, ctx: &EpisodeContext) -> Result<()>;
    /// Picks an item; always a member of `mask`.
    fn act(&mut self, mask: &ActionMask) -> Result<ItemIndex>;
    fn observe(&mut self, item: ItemIndex, reward: f64) -> Result<()>;
}

/// The benchmark's methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Method {
    Random,
    Popular,
    Impact,
    Mf,
    LinUcb,
    Dqn,
    Cfrl,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Random, Method::Popular, Method::Impact, Method::Mf, Method::LinUcb, Method::Dqn, Method::Cfrl];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::Popular => "Popular",
            Method::Impact => "Impact",
            Method::Mf => "MF",
            Method::LinUcb => "LinUCB",
            Method::Dqn => "DQN",
            Method::Cfrl => "CFRL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    /// Whether the method needs a pretrained MF model.
    pub fn needs_mf(self) -> bool {
        matches!(self, Method::Mf | Method::LinUcb | Method::Cfrl)
    }
}

fn pick(scores: &[f64], mask: &ActionMask) -> Result<ItemIndex> {
    masked_argmax(scores, mask.iter()).ok_or(Error::EmptyMask)
}

/// Uniformly random available item.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new() -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

impl Default for RandomPolicy {
    fn default() -> Self {
        Self::new()
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "Random"
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        Ok(())
    }

    fn act(&mut self, mask: &ActionMask) -> Result<ItemIndex> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(mask.get(self.rng.random_range(0..mask.len())))
    }

    fn observe(&mut self, _: ItemIndex, _: f64) -> Result<()> {
        Ok(())
    }
}

/// Fixed per-item scores; greedy over the mask.
#[derive(Debug, Clone)]
pub struct StaticScorePolicy {
    name: String,
    scores: Vec<f64>,
}

impl StaticScorePolicy {
    pub fn new(name: &str, scores: Vec<f64>) -> Self {
        Self { name: name.to_string(), scores }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

impl Policy for StaticScorePolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext) -> Result<()> {
        if ctx.num_items != self.scores.len() {
            return Err(Error::ShapeMismatch { expected: self.scores.len(), got: ctx.num_items });
        }
        Ok(())
    }

    fn act(&mut self, mask: &ActionMask) -> Result<ItemIndex> {
        pick(&self.scores, mask)
    }

    fn observe(&mut self, _: ItemIndex, _: f64) -> Result<()> {
        Ok(())
    }
}

/// Number of training users who rated each item.
pub fn popularity_scores(ds: &RatingDataset, train_users: &[UserIndex]) -> Vec<f64> {
    let mut counts = alloc::vec![0.0; ds.num_items()];
    for &u in train_users {
        for &i in ds.user_items(u) {
            counts[i as usize] += 1.0;
        }
    }
    counts
}

/// Impact of an item: the number of distinct other items co-rated with it by
/// at least one training user (its two-hop neighbourhood in the user-item
/// bipartite graph).
pub fn impact_scores(ds: &RatingDataset, train_users: &[UserIndex]) -> Vec<f64> {
    let n = ds.num_items();
    let mut is_train = alloc::vec![false; ds.num_users()];
    for &u in train_users {
        is_train[u] = true;
    }
    let mut seen = alloc::vec![usize::MAX; n];
    (0..n)
        .map(|i| {
            let mut count = 0usize;
            for &u in ds.item_users(i) {
                if !is_train[u as usize] {
                    continue;
                }
                for &j in ds.user_items(u as usize) {
                    let j = j as usize;
                    if j != i && seen[j] != i {
                        seen[j] = i;
                        count += 1;
                    }
                }
            }
            count as f64
        })
        .collect()
}

pub fn popular_policy(ds: &RatingDataset, train_users: &[UserIndex]) -> StaticScorePolicy {
    StaticScorePolicy::new("Popular", popularity_scores(ds, train_users))
}

pub fn impact_policy(ds: &RatingDataset, train_users: &[UserIndex]) -> StaticScorePolicy {
    StaticScorePolicy::new("Impact", impact_scores(ds, train_users))
}

/// Greedy on the MF prediction, with the user vector grown online from each
/// observed reward.
#[derive(Debug, Clone)]
pub struct OnlineMfPolicy<'a> {
    model: &'a MfModel,
    step: OnlineStep,
    state: UserLatentState,
    scores: Vec<f64>,
}

impl<'a> OnlineMfPolicy<'a> {
    pub fn new(model: &'a MfModel) -> Self {
        Self::with_step(model, model.online_step())
    }

    pub fn with_step(model: &'a MfModel, step: OnlineStep) -> Self {
        Self {
            model,
            step,
            state: UserLatentState::from_vec(alloc::vec![0.0; model.d()]),
            scores: alloc::vec![0.0; model.num_items()],
        }
    }

    pub fn state(&self) -> &UserLatentState {
        &self.state
    }

    pub fn score(&self, item: ItemIndex) -> f64 {
        self.model.predict(&self.state, item)
    }
}

impl Policy for OnlineMfPolicy<'_> {
    fn name(&self) -> &str {
        "MF"
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext) -> Result<()> {
        if ctx.num_items != self.model.num_items() {
            return Err(Error::ShapeMismatch { expected: self.model.num_items(), got: ctx.num_items });
        }
        self.state = UserLatentState::zeros(self.model.d())?;
        Ok(())
    }

    fn act(&mut self, mask: &ActionMask) -> Result<ItemIndex> {
        for i in mask.iter() {
            self.scores[i] = self.model.predict(&self.state, i);
        }
        pick(&self.scores, mask)
    }

    fn observe(&mut self, item: ItemIndex, reward: f64) -> Result<()> {
        self.state = self.model.online_update_with(self.step, &self.state, item, reward)?;
        Ok(())
    }
}

/// Shared ridge-regression model over `context = [user state; item vector]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinUcbModel {
    dim: usize,
    alpha: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    a_inv: Vec<f64>,
}

impl LinUcbModel {
    /// `A = I`, `b = 0`.
    pub fn new(dim: usize, alpha: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("context dimension must be at least 1".to_string()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("exploration weight {alpha} must be positive")));
        }
        let mut a = alloc::vec![0.0; dim * dim];
        for k in 0..dim {
            a[k * dim + k] = 1.0;
        }
        Ok(Self { dim, alpha, a_inv: a.clone(), a, b: alloc::vec![0.0; dim] })
    }

    /// Restores a model from `A` and `b` (checkpoint loading).
    pub fn from_parts(dim: usize, alpha: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(dim, alpha)?;
        if a.len() != dim * dim || b.len() != dim {
            return Err(Error::ShapeMismatch { expected: dim * dim + dim, got: a.len() + b.len() });
        }
        m.a = a;
        m.b = b;
        m.refresh()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a_inverse(&self) -> &[f64] {
        &self.a_inv
    }

    fn refresh(&mut self) -> Result<()> {
        if spd_inverse(self.dim, &self.a, &mut self.a_inv) {
            Ok(())
        } else {
            Err(Error::Divergence("LinUCB ridge matrix".to_string()))
        }
    }

    /// `θ = A⁻¹ b`.
    pub fn theta(&self) -> Vec<f64> {
        (0..self.dim).map(|i| dot(&self.a_inv[i * self.dim..(i + 1) * self.dim], &self.b)).collect()
    }

    /// `sqrt(xᵀ A⁻¹ x)`.
    pub fn width(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let q: f64 = (0..d).map(|i| x[i] * dot(&self.a_inv[i * d..(i + 1) * d], x)).sum();
        libm::sqrt(q.max(0.0))
    }

    /// `θᵀx + α·sqrt(xᵀ A⁻¹ x)`.
    pub fn ucb(&self, x: &[f64]) -> f64 {
        dot(&self.theta(), x) + self.alpha * self.width(x)
    }

    /// `A += x xᵀ`, `b += r x`.
    pub fn update(&mut self, x: &[f64], reward: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch { expected: self.dim, got: x.len() });
        }
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                self.a[i * d + j] += x[i] * x[j];
            }
            self.b[i] += reward * x[i];
        }
        self.refresh()
    }
}

/// LinUCB over `[latent user state; item vector]` contexts.
#[derive(Debug, Clone)]
pub struct LinUcbPolicy<'a> {
    model: LinUcbModel,
    items: &'a MfModel,
    step: OnlineStep,
    state: UserLatentState,
    learning: bool,
    /// `v_iᵀ R v_i` for every item, valid while A is unchanged.
    item_quad: Option<Vec<f64>>,
    scores: Vec<f64>,
    context: Vec<f64>,
}

impl<'a> LinUcbPolicy<'a> {
    pub fn new(items: &'a MfModel, step: OnlineStep, alpha_ucb: f64) -> Result<Self> {
        Self::from_model(LinUcbModel::new(2 * items.d(), alpha_ucb)?, items, step)
    }

    pub fn from_model(model: LinUcbModel, items: &'a MfModel, step: OnlineStep) -> Result<Self> {
        if model.dim() != 2 * items.d() {
            return Err(Error::ShapeMismatch { expected: 2 * items.d(), got: model.dim() });
        }
        Ok(Self {
            model,
            items,
            step,
            state: UserLatentState::from_vec(alloc::vec![0.0; items.d()]),
            learning: true,
            item_quad: None,
            scores: alloc::vec![0.0; items.num_items()],
            context: alloc::vec![0.0; 2 * items.d()],
        })
    }

    pub fn model(&self) -> &LinUcbModel {
        &self.model
    }

    pub fn into_model(self) -> LinUcbModel {
        self.model
    }

    /// Stops (or resumes) updating A and b on observed feedback.
    pub fn set_learning(&mut self, learning: bool) {
        self.learning = learning;
    }

    fn context_for(&mut self, item: ItemIndex) -> &[f64] {
        let d = self.items.d();
        self.context[..d].copy_from_slice(self.state.as_slice());
        self.context[d..].copy_from_slice(self.items.item_vector(item));
        &self.context
    }

    fn item_quadratic_terms(&mut self) -> &[f64] {
        if self.item_quad.is_none() {
            let (d, dim, n) = (self.items.d(), self.model.dim(), self.items.num_items());
            let mut r = alloc::vec![0.0; d * d];
            for i in 0..d {
                r[i * d..(i + 1) * d].copy_from_slice(&self.model.a_inv[(d + i) * dim + d..(d + i) * dim + dim]);
            }
            let v = self.items.item_factors();
            let mut vr = alloc::vec![0.0; n * d];
            gemm(n, d, d, v, &r, 0.0, &mut vr);
            self.item_quad = Some((0..n).map(|i| dot(&vr[i * d..(i + 1) * d], &v[i * d..(i + 1) * d])).collect());
        }
        self.item_quad.as_deref().unwrap_or_else(|| unreachable!())
    }
}

impl Policy for LinUcbPolicy<'_> {
    fn name(&self) -> &str {
        "LinUCB"
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext) -> Result<()> {
        if ctx.num_items != self.items.num_items() {
            return Err(Error::ShapeMismatch { expected: self.items.num_items(), got: ctx.num_items });
        }
        self.state = UserLatentState::zeros(self.items.d())?;
        Ok(())
    }

    fn act(&mut self, mask: &ActionMask) -> Result<ItemIndex> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        // A⁻¹ = [[P, Q], [Qᵀ, R]] with d×d blocks; x = [s; v]:
        // xᵀA⁻¹x = sᵀPs + 2 (Qᵀs)·v + vᵀRv
        let (d, dim) = (self.items.d(), self.model.dim());
        let theta = self.model.theta();
        let s = self.state.as_slice().to_vec();
        let a_inv = &self.model.a_inv;
        let mut qs = alloc::vec![0.0; d];
        let mut sps = 0.0;
        for i in 0..d {
            sps += s[i] * dot(&a_inv[i * dim..i * dim + d], &s);
            for (j, q) in qs.iter_mut().enumerate() {
                *q += s[i] * a_inv[i * dim + d + j];
            }
        }
        let base = dot(&theta[..d], &s);
        let theta_v = theta[d..].to_vec();
        let alpha = self.model.alpha();
        let quad = self.item_quadratic_terms().to_vec();
        for i in mask.iter() {
            let v = self.items.item_vector(i);
            let width = sps + 2.0 * dot(&qs, v) + quad[i];
            self.scores[i] = base + dot(&theta_v, v) + alpha * libm::sqrt(width.max(0.0));
        }
        pick(&self.scores, mask)
    }

    fn observe(&mut self, item: ItemIndex, reward: f64) -> Result<()> {
        if self.learning {
            let x = self.context_for(item).to_vec();
            self.model.update(&x, reward)?;
            self.item_quad = None;
        }
        self.state = self.items.online_update_with(self.step, &self.state, item, reward)?;
        Ok(())
    }
}

/// LinUCB training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LinUcbConfig {
    pub episodes: usize,
    pub alpha_ucb: f64,
}

impl Default for LinUcbConfig {
    fn default() -> Self {
        Self { episodes: 5_000, alpha_ucb: 1.0 }
    }
}

/// Trains LinUCB with the episode scheme of the Q-learning agents: each
/// episode interacts with a uniformly drawn training user for the horizon.
pub fn train_linucb(
    ds: &RatingDataset,
    split: &Split,
    model: &MfModel,
    train: &TrainConfig,
    cfg: &LinUcbConfig,
) -> Result<LinUcbModel> {
    let mut policy = LinUcbPolicy::new(model, train.online_step(), cfg.alpha_ucb)?;
    if split.train_users.is_empty() {
        return Err(Error::InvalidArgument("no training users".to_string()));
    }
    let mut rng = seed::rng(train.seed, "linucb-users");
    let env = EnvConfig { task: train.task, horizon: train.horizon, state_kind: StateKind::Raw };
    for k in 0..cfg.episodes {
        let user = split.train_users[rng.random_range(0..split.train_users.len())];
        let ctx = EpisodeContext { user, num_items: ds.num_items(), seed: seed::derive_indexed(train.seed, "linucb-episode", k as u64) };
        run_policy_episode(&mut policy, ds, user, env, &ctx)?;
    }
    Ok(policy.into_model())
}

/// Rolls `policy` through one episode and returns the rewards.
pub fn run_policy_episode(
    policy: &mut dyn Policy,
    ds: &RatingDataset,
    user: UserIndex,
    env: EnvConfig,
    ctx: &EpisodeContext,
) -> Result<Vec<f64>> {
    let mut ep = Episode::new(ds, None, user, EnvConfig { state_kind: StateKind::Raw, ..env })?;
    policy.begin_episode(ctx)?;
    while !ep.done() {
        let a = policy.act(ep.available_actions())?;
        let out = ep.step(a)?;
        policy.observe(a, out.reward)?;
    }
    Ok(ep.rewards().to_vec())
}

/// Trains a Q-network on raw rating-vector states (input width = item count).
pub fn train_raw_dqn(ds: &RatingDataset, split: &Split, cfg: &TrainConfig) -> Result<(QNetwork, Vec<EpisodeLog>)> {
    let source = UserEpisodes {
        ds,
        users: &split.train_users,
        encoder: None,
        env: EnvConfig { task: cfg.task, horizon: cfg.horizon, state_kind: StateKind::Raw },
    };
    let mut trainer = Trainer::new(cfg.clone(), ds.num_items(), ds.num_items())?;
    trainer.run(&source)?;
    let log = trainer.log().to_vec();
    Ok((trainer.into_network(), log))
}

#[derive(Debug, Clone)]
enum QState<'a> {
    Cf { model: &'a MfModel, step: OnlineStep, state: UserLatentState },
    Raw { raw: SparseVector },
}

/// Greedy policy of a trained Q-network, fed either latent or raw states.
#[derive(Debug, Clone)]
pub struct QPolicy<'a> {
    name: String,
    net: &'a QNetwork,
    state: QState<'a>,
}

impl<'a> QPolicy<'a> {
    pub fn cf(name: &str, net: &'a QNetwork, model: &'a MfModel, step: OnlineStep) -> Result<Self> {
        if net.input_dim() != model.d() || net.output_dim() != model.num_items() {
            return Err(Error::ArchitectureMismatch);
        }
        let state = UserLatentState::zeros(model.d())?;
        Ok(Self { name: name.to_string(), net, state: QState::Cf { model, step, state } })
    }

    pub fn raw(name: &str, net: &'a QNetwork) -> Result<Self> {
        if net.input_dim() != net.output_dim() {
            return Err(Error::ArchitectureMismatch);
        }
        let raw = SparseVector { dim: net.input_dim(), ..SparseVector::default() };
        Ok(Self { name: name.to_string(), net, state: QState::Raw { raw } })
    }
}

impl Policy for QPolicy<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn begin_episode(&mut self, ctx: &EpisodeContext) -> Result<()> {
        if ctx.num_items != self.net.output_dim() {
            return Err(Error::ShapeMismatch { expected: self.net.output_dim(), got: ctx.num_items });
        }
        match &mut self.state {
            QState::Cf { model, state, .. } => *state = UserLatentState::zeros(model.d())?,
            QState::Raw { raw } => {
                raw.indices.clear();
                raw.values.clear();
            }
        }
        Ok(())
    }

    fn act(&mut self, mask: &ActionMask) -> Result<ItemIndex> {
        let q = match &self.state {
            QState::Cf { state, .. } => self.net.forward(state.as_slice())?,
            QState::Raw { raw } => self.net.forward(Features::Sparse {
                dim: raw.dim,
                indices: &raw.indices,
                values: &raw.values,
            })?,
        };
        pick(&q, mask)
    }

    fn observe(&mut self, item: ItemIndex, reward: f64) -> Result<()> {
        match &mut self.state {
            QState::Cf { model, step, state } => *state = model.online_update_with(*step, state, item, reward)?,
            QState::Raw { raw } => {
                if reward != 0.0 {
                    raw.indices.push(item as u32);
                    raw.values.push(reward);
                }
            }
        }
        Ok(())
    }
}

/// Convenience for callers that keep heterogeneous policies together.
pub type BoxedPolicy<'a> = Box<dyn Policy + Send + 'a>;

/// Episode seed for `user` under a policy-level seed.
pub fn episode_seed(seed: u64, user: UserIndex) -> u64 {
    seed::derive_indexed(seed, "eval-episode", user as u64)
}
