//! Matrix factorization over explicit ratings.
//!
//! The model minimizes
//!
//! ```text
//! L = Σ_(u,i) (U_uᵀ V_i − R_ui)² + λ (‖U‖²_F + ‖V‖²_F)
//! ```
//!
//! with plain per-rating SGD. There are no bias terms. After pretraining the
//! item vectors are frozen and a new user's latent vector is grown one observed
//! rating at a time by [`MfModel::online_update`]; that vector is the
//! collaborative-filtering state the agents act on.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ItemIndex, RatingDataset, UserIndex};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::seed;

/// Half-width of the uniform initialization interval for U and V.
pub const INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MfConfig {
    pub d: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub epochs: usize,
}

impl Default for MfConfig {
    fn default() -> Self {
        Self { d: 16, lambda: 0.01, alpha: 0.01, epochs: 30 }
    }
}

impl MfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("latent dimensionality d must be at least 1".to_string()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("regularization {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// Latent factors. `user_factors` holds `m` contiguous d-vectors (user-major),
/// `item_factors` holds `n` contiguous d-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MfModel {
    d: usize,
    m: usize,
    n: usize,
    lambda: f64,
    alpha: f64,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
}

/// The active user's latent vector `U_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLatentState(Vec<f64>);

impl UserLatentState {
    pub fn zeros(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("latent dimensionality d must be at least 1".to_string()));
        }
        Ok(Self(alloc::vec![0.0; d]))
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Zero initial state for a fresh user.
pub fn init_user_state(d: usize) -> Result<UserLatentState> {
    UserLatentState::zeros(d)
}

/// Learning rate and regularization for one online SGD step on a user vector.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OnlineStep {
    pub alpha: f64,
    pub lambda: f64,
}

impl OnlineStep {
    /// `u − 2α[(uᵀv − r) v + λ u]`.
    pub fn user_update(&self, user: &[f64], item: &[f64], rating: f64) -> Result<Vec<f64>> {
        let err = dot(user, item) - rating;
        let out: Vec<f64> = user
            .iter()
            .zip(item)
            .map(|(&u, &v)| u - 2.0 * self.alpha * (err * v + self.lambda * u))
            .collect();
        if out.iter().all(|x| x.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Divergence("online user update".to_string()))
        }
    }

    /// `v − 2α[(uᵀv − r) u + λ v]`, evaluated at the pre-update `user`.
    pub fn item_update(&self, user: &[f64], item: &[f64], rating: f64) -> Result<Vec<f64>> {
        self.user_update(item, user, rating)
    }
}

/// Per-epoch training RMSE, in epoch order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainReport {
    pub epoch_rmse: Vec<f64>,
}

impl PretrainReport {
    pub fn final_rmse(&self) -> Option<f64> {
        self.epoch_rmse.last().copied()
    }
}

/// Fits U and V on the ratings of `train_users` by epoch-wise SGD over the
/// shuffled ratings. Deterministic in `seed`.
pub fn pretrain(
    ds: &RatingDataset,
    train_users: &[UserIndex],
    cfg: &MfConfig,
    seed: u64,
) -> Result<(MfModel, PretrainReport)> {
    cfg.validate()?;
    let mut ratings: Vec<(u32, u32, f64)> = train_users
        .iter()
        .flat_map(|&u| {
            ds.user_items(u).iter().zip(ds.user_ratings(u)).map(move |(&i, &r)| (u as u32, i, f64::from(r)))
        })
        .collect();
    if ratings.is_empty() {
        return Err(Error::InvalidArgument("no training ratings".to_string()));
    }

    let mut model = MfModel::random(cfg, ds.num_users(), ds.num_items(), seed::derive(seed, "mf-init"));
    let mut rng = seed::rng(seed, "mf-shuffle");
    let step = OnlineStep { alpha: cfg.alpha, lambda: cfg.lambda };
    let d = cfg.d;
    let mut report = PretrainReport::default();
    for _ in 0..cfg.epochs {
        ratings.shuffle(&mut rng);
        for &(u, i, r) in &ratings {
            let (u, i) = (u as usize, i as usize);
            let uu = &mut model.user_factors[u * d..(u + 1) * d];
            let vi = &mut model.item_factors[i * d..(i + 1) * d];
            let err = dot(uu, vi) - r;
            if !err.is_finite() {
                return Err(Error::Divergence("matrix factorization pretraining".to_string()));
            }
            for k in 0..d {
                let (uk, vk) = (uu[k], vi[k]);
                uu[k] = uk - 2.0 * step.alpha * (err * vk + step.lambda * uk);
                vi[k] = vk - 2.0 * step.alpha * (err * uk + step.lambda * vk);
            }
        }
        let rmse = model.rmse(ratings.iter().map(|&(u, i, r)| (u as usize, i as usize, r)));
        if !rmse.is_finite() {
            return Err(Error::Divergence("matrix factorization pretraining".to_string()));
        }
        report.epoch_rmse.push(rmse);
    }
    Ok((model, report))
}

impl MfModel {
    fn random(cfg: &MfConfig, m: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE)).collect()
        };
        let user_factors = draw(m * cfg.d);
        let item_factors = draw(n * cfg.d);
        Self { d: cfg.d, m, n, lambda: cfg.lambda, alpha: cfg.alpha, user_factors, item_factors }
    }

    /// Assembles a model from raw factors (used by checkpoint loading).
    pub fn from_parts(
        d: usize,
        m: usize,
        n: usize,
        lambda: f64,
        alpha: f64,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
    ) -> Result<Self> {
        MfConfig { d, lambda, alpha, epochs: 0 }.validate()?;
        if user_factors.len() != m * d {
            return Err(Error::ShapeMismatch { expected: m * d, got: user_factors.len() });
        }
        if item_factors.len() != n * d {
            return Err(Error::ShapeMismatch { expected: n * d, got: item_factors.len() });
        }
        if !user_factors.iter().chain(&item_factors).all(|x| x.is_finite()) {
            return Err(Error::Validation("non-finite factor".to_string()));
        }
        Ok(Self { d, m, n, lambda, alpha, user_factors, item_factors })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_users(&self) -> usize {
        self.m
    }

    pub fn num_items(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.item_factors
    }

    pub fn user_vector(&self, user: UserIndex) -> &[f64] {
        &self.user_factors[user * self.d..(user + 1) * self.d]
    }

    pub fn item_vector(&self, item: ItemIndex) -> &[f64] {
        &self.item_factors[item * self.d..(item + 1) * self.d]
    }

    /// The model's own (α, λ), used for online updates unless overridden.
    pub fn online_step(&self) -> OnlineStep {
        OnlineStep { alpha: self.alpha, lambda: self.lambda }
    }

    /// Score of `item` for a user in latent `state`.
    pub fn predict(&self, state: &UserLatentState, item: ItemIndex) -> f64 {
        dot(state.as_slice(), self.item_vector(item))
    }

    /// One SGD step of the user vector on a single observed rating. The
    /// model's item vectors are never modified.
    pub fn online_update(&self, state: &UserLatentState, item: ItemIndex, rating: f64) -> Result<UserLatentState> {
        self.online_update_with(self.online_step(), state, item, rating)
    }

    pub fn online_update_with(
        &self,
        step: OnlineStep,
        state: &UserLatentState,
        item: ItemIndex,
        rating: f64,
    ) -> Result<UserLatentState> {
        if item >= self.n {
            return Err(Error::InvalidArgument(format!("item index {item} out of range")));
        }
        if state.dim() != self.d {
            return Err(Error::ShapeMismatch { expected: self.d, got: state.dim() });
        }
        if !rating.is_finite() {
            return Err(Error::InvalidArgument("rating must be finite".to_string()));
        }
        step.user_update(state.as_slice(), self.item_vector(item), rating).map(UserLatentState)
    }

    /// Root mean squared error of the stored factors on `(user, item, rating)` triples.
    pub fn rmse(&self, ratings: impl IntoIterator<Item = (UserIndex, ItemIndex, f64)>) -> f64 {
        let (mut sse, mut count) = (0.0, 0usize);
        for (u, i, r) in ratings {
            let e = dot(self.user_vector(u), self.item_vector(i)) - r;
            sse += e * e;
            count += 1;
        }
        libm::sqrt(sse / count as f64)
    }

    /// The full squared-loss objective over the given ratings, regularizing all
    /// of U and V.
    pub fn objective(&self, ratings: &[(UserIndex, ItemIndex, f64)]) -> f64 {
        let fit: f64 = ratings
            .iter()
            .map(|&(u, i, r)| {
                let e = dot(self.user_vector(u), self.item_vector(i)) - r;
                e * e
            })
            .sum();
        let norm: f64 = self.user_factors.iter().chain(&self.item_factors).map(|x| x * x).sum();
        fit + self.lambda * norm
    }

    /// Analytic gradient of [`Self::objective`] with respect to U and V, laid
    /// out like `user_factors` and `item_factors`.
    pub fn objective_gradient(&self, ratings: &[(UserIndex, ItemIndex, f64)]) -> (Vec<f64>, Vec<f64>) {
        let d = self.d;
        let mut gu: Vec<f64> = self.user_factors.iter().map(|x| 2.0 * self.lambda * x).collect();
        let mut gv: Vec<f64> = self.item_factors.iter().map(|x| 2.0 * self.lambda * x).collect();
        for &(u, i, r) in ratings {
            let (uu, vi) = (self.user_vector(u), self.item_vector(i));
            let e = dot(uu, vi) - r;
            for k in 0..d {
                gu[u * d + k] += 2.0 * e * vi[k];
                gv[i * d + k] += 2.0 * e * uu[k];
            }
        }
        (gu, gv)
    }

    /// Mutable access for perturbation-based tests and checkpoint tooling.
    pub fn factors_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.user_factors, &mut self.item_factors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RatingRecord;
    use alloc::vec;
    use proptest::prelude::*;

    fn single() -> RatingDataset {
        RatingDataset::from_records(&[RatingRecord { user: 1, item: 1, rating: 4, timestamp: 0 }]).unwrap()
    }

    fn toy_model(d: usize, n: usize, seed: u64) -> MfModel {
        MfModel::random(&MfConfig { d, ..MfConfig::default() }, 1, n, seed)
    }

    #[test]
    fn single_rating_is_fitted_exactly() {
        let cfg = MfConfig { d: 2, lambda: 0.0, alpha: 0.05, epochs: 2000 };
        let (model, report) = pretrain(&single(), &[0], &cfg, 3).unwrap();
        let u = UserLatentState::from_vec(model.user_vector(0).to_vec());
        assert!((model.predict(&u, 0) - 4.0).abs() < 1e-3);
        assert!(report.final_rmse().unwrap() < 1e-3);
    }

    #[test]
    fn zero_state() {
        let s = init_user_state(8).unwrap();
        assert_eq!(s.as_slice(), &[0.0; 8]);
        let m = toy_model(8, 5, 1);
        assert!((0..5).all(|i| m.predict(&s, i) == 0.0));
        assert!(init_user_state(0).is_err());
    }

    #[test]
    fn scalar_predict() {
        let m = MfModel::from_parts(1, 1, 1, 0.0, 0.1, vec![0.0], vec![1.5]).unwrap();
        assert_eq!(m.predict(&UserLatentState::from_vec(vec![2.0]), 0), 3.0);
    }

    #[test]
    fn online_update_from_zero_is_scaled_item_vector() {
        let m = toy_model(4, 3, 9);
        let s = init_user_state(4).unwrap();
        let next = m.online_update(&s, 2, 5.0).unwrap();
        for (a, v) in next.as_slice().iter().zip(m.item_vector(2)) {
            assert!((a - 2.0 * m.alpha() * 5.0 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn online_update_rejects_bad_inputs() {
        let m = toy_model(4, 3, 9);
        let s = init_user_state(4).unwrap();
        assert!(m.online_update(&s, 3, 1.0).is_err());
        assert!(m.online_update(&s, 0, f64::NAN).is_err());
        assert!(matches!(
            m.online_update(&init_user_state(3).unwrap(), 0, 1.0),
            Err(Error::ShapeMismatch { .. })
        ));
        let huge = MfModel::from_parts(1, 1, 1, 0.0, 1e300, vec![0.0], vec![1e300]).unwrap();
        assert!(matches!(
            huge.online_update(&UserLatentState::from_vec(vec![1e300]), 0, 1.0),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn from_parts_checks_shapes() {
        assert!(MfModel::from_parts(2, 1, 1, 0.0, 0.1, vec![0.0], vec![0.0, 0.0]).is_err());
        assert!(MfModel::from_parts(0, 1, 1, 0.0, 0.1, vec![], vec![]).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = MfConfig { d: 2, lambda: 0.0, alpha: 1e3, epochs: 50 };
        assert!(matches!(pretrain(&single(), &[0], &cfg, 0), Err(Error::Divergence(_))));
    }

    #[test]
    fn pretraining_is_deterministic() {
        let recs: Vec<_> = (0..4u64)
            .flat_map(|u| (0..3u64).map(move |i| RatingRecord { user: u, item: i, rating: ((u + i) % 5 + 1) as u8, timestamp: 0 }))
            .collect();
        let ds = RatingDataset::from_records(&recs).unwrap();
        let cfg = MfConfig { epochs: 5, ..MfConfig::default() };
        assert_eq!(pretrain(&ds, &[0, 1, 2], &cfg, 5).unwrap(), pretrain(&ds, &[0, 1, 2], &cfg, 5).unwrap());
        assert!(pretrain(&ds, &[], &cfg, 5).is_err());
    }

    proptest! {
        #[test]
        fn online_update_decreases_per_rating_objective(
            u in proptest::collection::vec(-1.0f64..1.0, 6),
            v in proptest::collection::vec(-1.0f64..1.0, 6),
            r in 1.0f64..5.0,
        ) {
            let step = OnlineStep { alpha: 1e-3, lambda: 0.01 };
            let obj = |x: &[f64]| {
                let e = dot(x, &v) - r;
                e * e + step.lambda * dot(x, x)
            };
            let next = step.user_update(&u, &v, r).unwrap();
            let grad_norm: f64 = u.iter().zip(&v).map(|(a, b)| {
                let g = 2.0 * ((dot(&u, &v) - r) * b + step.lambda * a);
                g * g
            }).sum();
            prop_assume!(grad_norm > 1e-12);
            prop_assert!(obj(&next) < obj(&u));
        }

        #[test]
        fn online_update_is_pure(
            u in proptest::collection::vec(-1.0f64..1.0, 4),
            r in 1.0f64..5.0,
        ) {
            let m = toy_model(4, 2, 17);
            let s = UserLatentState::from_vec(u);
            prop_assert_eq!(m.online_update(&s, 1, r).unwrap(), m.online_update(&s, 1, r).unwrap());
        }

        #[test]
        fn positive_scaling_preserves_argmax(
            u in proptest::collection::vec(-1.0f64..1.0, 4),
            c in 0.01f64..100.0,
        ) {
            let m = toy_model(4, 20, 23);
            let argmax = |s: &UserLatentState| {
                (0..20).fold((0, f64::NEG_INFINITY), |best, i| {
                    let p = m.predict(s, i);
                    if p > best.1 { (i, p) } else { best }
                }).0
            };
            let s = UserLatentState::from_vec(u.clone());
            let scaled = UserLatentState::from_vec(u.iter().map(|x| x * c).collect());
            prop_assert_eq!(argmax(&s), argmax(&scaled));
        }
    }
}
