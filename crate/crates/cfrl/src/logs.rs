//! Training log and episode trace, as CSV.

use std::fs::File;
use std::path::Path;

use cfrl_core::agent::{EpisodeLog, StepRecord};
use serde::{Deserialize, Serialize};

use crate::IoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    /// External user id.
    pub user: u64,
    pub reward_sum: f64,
    pub mean_td_loss: f64,
    pub epsilon: f64,
    pub sync_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    /// External user id.
    pub user: u64,
    pub t: usize,
    /// External item id.
    pub action: u64,
    pub reward: f64,
    pub done: bool,
}

/// Maps dense indices to the ids written in logs.
pub trait IdMap {
    fn user_id(&self, user: usize) -> u64;
    fn item_id(&self, item: usize) -> u64;
}

impl IdMap for cfrl_core::dataset::RatingDataset {
    fn user_id(&self, user: usize) -> u64 {
        cfrl_core::dataset::RatingDataset::user_id(self, user)
    }

    fn item_id(&self, item: usize) -> u64 {
        cfrl_core::dataset::RatingDataset::item_id(self, item)
    }
}

pub fn log_row(ids: &impl IdMap, l: &EpisodeLog) -> LogRow {
    LogRow {
        episode: l.episode,
        user: ids.user_id(l.user),
        reward_sum: l.reward_sum,
        mean_td_loss: l.mean_td_loss,
        epsilon: l.epsilon,
        sync_count: l.sync_count,
    }
}

pub fn trace_row(ids: &impl IdMap, s: &StepRecord) -> TraceRow {
    TraceRow {
        episode: s.episode,
        user: ids.user_id(s.user),
        t: s.t,
        action: ids.item_id(s.action),
        reward: s.reward,
        done: s.done,
    }
}

/// Streaming CSV writer for one row type.
pub struct CsvSink {
    path: std::path::PathBuf,
    inner: csv::Writer<File>,
}

impl CsvSink {
    /// Creates the file, or appends without a header when `append` is set
    /// and the file exists.
    pub fn open(path: &Path, append: bool) -> Result<Self, IoError> {
        let exists = append && path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(exists)
            .truncate(!exists)
            .open(path)
            .map_err(|e| IoError::at(path, e))?;
        let inner = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
        Ok(Self { path: path.to_path_buf(), inner })
    }

    pub fn write<T: Serialize>(&mut self, row: &T) -> Result<(), IoError> {
        self.inner.serialize(row).map_err(|e| csv_error(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<(), IoError> {
        self.inner.flush().map_err(|e| IoError::at(&self.path, e))
    }
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> IoError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IoError::at(path, io),
            other => IoError::corrupt(path, format!("{other:?}")),
        }
    } else {
        IoError::corrupt(path, e.to_string())
    }
}
