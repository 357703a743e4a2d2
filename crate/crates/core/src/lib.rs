//! Collaborative-filtering reinforcement learning for multi-step interactive
//! recommendation.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece of
//! the benchmark:
//!
//! * [`dataset`]: sparse explicit-rating matrix, MovieLens line parsing,
//!   candidate-based train/test splits.
//! * [`mf`]: matrix-factorization pretraining and the online per-rating update
//!   that turns a user's feedback into a latent state.
//! * [`env`]: the episodic recommendation MDP over one user's logged ratings.
//! * [`qnet`]: a feedforward action-value network with a target copy.
//! * [`agent`]: replay memory, epsilon-greedy selection and the Q-learning loop.
//! * [`baselines`]: Random, Popular, Impact, online MF, LinUCB and greedy
//!   Q-network policies behind one [`baselines::Policy`] interface.
//! * [`eval`]: offline evaluation, aggregation and comparison reports.
//! * [`stats`]: paired t-test on top of the regularized incomplete beta.
//!
//! File formats, the CLI and everything touching the filesystem live in the
//! companion `cfrl` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agent;
pub mod baselines;
pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod mf;
pub mod qnet;
pub mod seed;
pub mod stats;

mod linalg;

pub use error::{Error, Result};
