//! Run configuration: a TOML file with sections, overridable from flags.

use std::path::{Path, PathBuf};

use cfrl_core::agent::TrainConfig;
use cfrl_core::baselines::{LinUcbConfig, Method};
use cfrl_core::dataset::{RatingFormat, SplitConfig, MOVIELENS_MIN_USER_RATINGS};
use cfrl_core::env::TaskMode;
use cfrl_core::eval::BenchmarkConfig;
use cfrl_core::mf::MfConfig;
use cfrl_core::seed;
use serde::{Deserialize, Serialize};

use crate::IoError;

/// File name of the resolved configuration inside every output directory.
pub const RESOLVED_CONFIG: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Top-level seed; every random stream derives from it.
    pub seed: u64,
    pub out: PathBuf,
    /// Splits evaluated concurrently by `benchmark`.
    pub jobs: usize,
    pub data: DataConfig,
    pub split: SplitSection,
    pub mf: MfConfig,
    pub agent: TrainConfig,
    pub linucb: LinUcbConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            jobs: 1,
            data: DataConfig::default(),
            split: SplitSection::default(),
            mf: MfConfig::default(),
            agent: TrainConfig::default(),
            linucb: LinUcbConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Ratings file or dataset snapshot.
    pub path: PathBuf,
    /// Detected from the first line when absent.
    pub format: Option<RatingFormat>,
    /// Label used in reports.
    pub name: String,
    pub min_user_ratings: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/ml-100k/u.data"),
            format: None,
            name: "ML100K".to_string(),
            min_user_ratings: MOVIELENS_MIN_USER_RATINGS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    #[serde(flatten)]
    pub params: SplitConfig,
    /// Split used by `pretrain`, `train` and `eval`.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// `cfrl`, `dqn` or `linucb`.
    pub method: Method,
    /// MF checkpoint; `<out>/mf.bin` when absent.
    pub mf_checkpoint: Option<PathBuf>,
    /// Episodes between resumable checkpoints; 0 writes one at the end only.
    pub checkpoint_every: usize,
    /// Write the per-step episode trace.
    pub trace: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { method: Method::Cfrl, mf_checkpoint: None, checkpoint_every: 1000, trace: false }
    }
}

/// Evaluation uses the agent section's horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub methods: Vec<Method>,
    pub tasks: Vec<TaskMode>,
    /// Split indices run by `benchmark`; all when absent.
    pub splits: Option<Vec<usize>>,
    /// Trained policy evaluated by `eval` for learned methods.
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            tasks: vec![TaskMode::TaskI, TaskMode::TaskII],
            splits: None,
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::at(path, e))?;
        toml::from_str(&text).map_err(|e| IoError::corrupt(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| panic!("run config always serializes: {e}"))
    }

    /// Writes `config.toml` into the output directory.
    pub fn write_resolved(&self) -> Result<PathBuf, IoError> {
        std::fs::create_dir_all(&self.out).map_err(|e| IoError::at(&self.out, e))?;
        let path = self.out.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(|e| IoError::at(&path, e))?;
        Ok(path)
    }

    pub fn splits_seed(&self) -> u64 {
        seed::derive(self.seed, "splits")
    }

    pub fn agent_seed(&self) -> u64 {
        seed::derive(self.seed, "agent")
    }

    pub fn eval_seed(&self) -> u64 {
        seed::derive(self.seed, "eval")
    }

    /// Training parameters for one split and task, seeded as the benchmark
    /// seeds them.
    pub fn train_config(&self, split_seed: u64, task: TaskMode) -> TrainConfig {
        TrainConfig { task, seed: split_seed ^ self.agent_seed(), ..self.agent.clone() }
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            mf: self.mf,
            train: TrainConfig { seed: self.agent_seed(), ..self.agent.clone() },
            linucb: self.linucb.clone(),
            eval_seed: self.eval_seed(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert!(text.contains("[agent]"));
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 7\n[mf]\nd = 8\n[eval]\nmethods = [\"random\"]\ntasks = [\"task1\"]\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mf.d, 8);
        assert_eq!(cfg.mf.epochs, MfConfig::default().epochs);
        assert_eq!(cfg.eval.methods, vec![Method::Random]);
        assert_eq!(cfg.eval.tasks, vec![TaskMode::TaskI]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[mf]\nrank = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[split]\nfolds = 3\n").is_err());
    }

    #[test]
    fn split_section_mixes_params_and_index() {
        let cfg: RunConfig = toml::from_str("[split]\nn_splits = 4\nindex = 2\n").unwrap();
        assert_eq!(cfg.split.params.n_splits, 4);
        assert_eq!(cfg.split.index, 2);
        assert_eq!(cfg.split.params.min_ratings, 100);
    }
}
