use std::fs;
use std::path::Path;

use cfrl::checkpoint;
use cfrl::data;
use cfrl::IoError;
use cfrl_core::agent::{TrainConfig, Trainer, UserEpisodes};
use cfrl_core::baselines::LinUcbModel;
use cfrl_core::dataset::{RatingDataset, RatingRecord};
use cfrl_core::env::{EnvConfig, StateKind, TaskMode};
use cfrl_core::mf::{pretrain, MfConfig};
use cfrl_core::qnet::{Activation, QNetwork};

fn toy_dataset() -> RatingDataset {
    let mut records = Vec::new();
    for u in 0..12u64 {
        for i in 0..9u64 {
            if (u + 2 * i) % 4 != 1 {
                records.push(RatingRecord { user: 100 + u, item: 7 * i + 3, rating: (1 + (u * i) % 5) as u8, timestamp: 0 });
            }
        }
    }
    RatingDataset::from_records(&records).unwrap()
}

fn assert_corrupt(r: Result<impl std::fmt::Debug, IoError>, path: &Path) {
    let e = r.unwrap_err();
    assert!(matches!(e, IoError::Corrupt { .. } | IoError::Io { .. }), "{e:?}");
    assert!(e.to_string().contains(path.to_str().unwrap()), "{e}");
}

/// Flipping the magic, bumping the version and truncating must all be rejected.
fn check_rejections<T: std::fmt::Debug>(path: &Path, read: impl Fn(&Path) -> Result<T, IoError>) {
    let good = fs::read(path).unwrap();
    let bad = path.with_extension("bad");
    let mut b = good.clone();
    b[0] ^= 0xff;
    fs::write(&bad, &b).unwrap();
    assert_corrupt(read(&bad), &bad);
    let mut b = good.clone();
    b[8] = b[8].wrapping_add(1);
    fs::write(&bad, &b).unwrap();
    assert_corrupt(read(&bad), &bad);
    fs::write(&bad, &good[..good.len() - 3]).unwrap();
    assert_corrupt(read(&bad), &bad);
    let mut b = good;
    b.push(0);
    fs::write(&bad, &b).unwrap();
    assert_corrupt(read(&bad), &bad);
}

#[test]
fn snapshot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset();
    let p = dir.path().join("ds.bin");
    data::write_snapshot(&p, &ds).unwrap();
    assert_eq!(data::read_snapshot(&p).unwrap(), ds);
    assert_eq!(data::load_any(&p, None, 0).unwrap(), ds);
    check_rejections(&p, data::read_snapshot);
}

#[test]
fn tsv_export_reloads_to_the_same_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset();
    let p = dir.path().join("ds.tsv");
    let mut out = Vec::new();
    data::write_tsv(&mut out, &ds).unwrap();
    fs::write(&p, out).unwrap();
    assert_eq!(data::load_any(&p, None, 0).unwrap(), ds);
}

#[test]
fn mf_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset();
    let users: Vec<usize> = (0..ds.num_users()).collect();
    let (model, _) = pretrain(&ds, &users, &MfConfig { d: 3, epochs: 4, ..MfConfig::default() }, 5).unwrap();
    let p = dir.path().join("mf.bin");
    checkpoint::write_mf(&p, &model).unwrap();
    assert_eq!(&fs::read(&p).unwrap()[..8], checkpoint::MF_MAGIC);
    assert_eq!(checkpoint::read_mf(&p).unwrap(), model);
    check_rejections(&p, checkpoint::read_mf);
}

#[test]
fn qnet_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for act in [Activation::Relu, Activation::Tanh] {
        let net = QNetwork::new(&[5, 7, 4, 11], act, 9).unwrap();
        let p = dir.path().join("q.bin");
        checkpoint::write_qnet(&p, &net).unwrap();
        assert_eq!(checkpoint::read_qnet(&p).unwrap(), net);
        check_rejections(&p, checkpoint::read_qnet);
    }
}

#[test]
fn linucb_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = LinUcbModel::new(4, 0.7).unwrap();
    model.update(&[0.1, -0.2, 0.3, 1.0], 4.0).unwrap();
    model.update(&[0.5, 0.2, -0.3, 0.0], 2.0).unwrap();
    let p = dir.path().join("lin.bin");
    checkpoint::write_linucb(&p, &model).unwrap();
    assert_eq!(checkpoint::read_linucb(&p).unwrap(), model);
    check_rejections(&p, checkpoint::read_linucb);
}

#[test]
fn trainer_state_round_trip_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let ds = toy_dataset();
    let users: Vec<usize> = (0..ds.num_users()).collect();
    let cfg = TrainConfig {
        episodes: 8,
        horizon: 4,
        hidden: vec![6],
        batch_size: 3,
        sync_period: 5,
        task: TaskMode::TaskII,
        seed: 21,
        ..TrainConfig::default()
    };
    let source = UserEpisodes {
        ds: &ds,
        users: &users,
        encoder: None,
        env: EnvConfig { task: cfg.task, horizon: cfg.horizon, state_kind: StateKind::Raw },
    };
    let mut straight = Trainer::new(cfg.clone(), ds.num_items(), ds.num_items()).unwrap();
    straight.run_for(&source, 8).unwrap();

    let mut first = Trainer::new(cfg.clone(), ds.num_items(), ds.num_items()).unwrap();
    first.run_for(&source, 5).unwrap();
    let p = dir.path().join("state.bin");
    checkpoint::write_trainer_state(&p, &first.state()).unwrap();
    let restored = checkpoint::read_trainer_state(&p).unwrap();
    assert_eq!(restored, first.state());
    check_rejections(&p, checkpoint::read_trainer_state);

    let mut resumed = Trainer::resume(cfg, restored).unwrap();
    resumed.run_for(&source, 3).unwrap();
    assert_eq!(resumed.state(), straight.state());
}

#[test]
fn atomic_write_leaves_no_temp_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.bin");
    checkpoint::write_atomic(&p, |tmp| checkpoint::write_qnet(tmp, &QNetwork::new(&[2, 3], Activation::Relu, 0).unwrap()))
        .unwrap();
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("x.bin")]);
}
