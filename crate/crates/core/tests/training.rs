mod common;

use common::*;
use gpe::dataset::{Manifest, Split};
use gpe::engine::Engine;
use gpe::training::{
    ablation_csv, engine_config_for, inject_noise, load_model, read_metrics, train, validation_loss, LoadedSplit,
    RunOptions, TrainSample,
};
use gpe::trajectory::Trajectory;

#[test]
fn loss_decreases_on_smoke_config() {
    let dir = tempfile::tempdir().unwrap();
    let m = blob_dataset(dir.path(), 60, 80);
    let mut cfg = small_train_config(m, 300);
    cfg.batch = 4;
    cfg.val_every = 50;
    let out = train(&cfg, &dir.path().join("run"), &RunOptions::default()).unwrap();
    assert_eq!(out.losses.len(), 300);
    let k = out.losses.len() / 10;
    let first = median(&out.losses[..k]);
    let last = median(&out.losses[out.losses.len() - k..]);
    assert!(last < first, "first {first} last {last}");
    let rows = read_metrics(&dir.path().join("run/metrics.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), (1..=6).map(|k| 50 * k).collect::<Vec<_>>());
    assert!(rows.iter().all(|r| r.val_seen.is_finite() && r.val_unseen.is_finite()));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let m = blob_dataset(dir.path(), 30, 30);
    let mut cfg = small_train_config(m, 10);
    cfg.lr_start = 0.0;
    cfg.lr_end = 0.0;
    let out = train(&cfg, &dir.path().join("run"), &RunOptions::default()).unwrap();
    let manifest = Manifest::load(&cfg.manifest).unwrap();
    let init = engine_config_for(&manifest, &cfg.engine)
        .init_params(&mut rng(cfg.seed))
        .unwrap();
    for ((ka, a), (kb, b)) in out.params.iter().zip(init.iter()) {
        assert_eq!(ka, kb);
        assert_eq!(a.value, b.value, "{ka}");
    }
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let m = blob_dataset(dir.path(), 40, 40);
    let cfg = small_train_config(m, 100);
    let full = dir.path().join("full");
    let part = dir.path().join("part");
    train(&cfg, &full, &RunOptions::default()).unwrap();
    let first = train(&cfg, &part, &RunOptions { resume: None, stop_at: Some(50) }).unwrap();
    assert_eq!(first.final_step, 50);
    let resumed = RunOptions {
        resume: Some(part.join("checkpoint.toml")),
        stop_at: None,
    };
    let second = train(&cfg, &part, &resumed).unwrap();
    assert_eq!(second.final_step, 100);
    for name in ["checkpoint.toml", "checkpoint.bin", "best.toml", "best.bin"] {
        let a = std::fs::read(full.join(name)).unwrap();
        let b = std::fs::read(part.join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
    let strip = |rows: Vec<gpe::training::MetricsRow>| -> Vec<_> {
        rows.into_iter().map(|r| (r.step, r.lr.to_bits(), r.train_loss.to_bits(), r.val_seen.to_bits(), r.msg_evals)).collect()
    };
    assert_eq!(
        strip(read_metrics(&full.join("metrics.csv")).unwrap()),
        strip(read_metrics(&part.join("metrics.csv")).unwrap())
    );
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = blob_dataset(dir.path(), 30, 30);
    let cfg = small_train_config(m, 30);
    let a = train(&cfg, &dir.path().join("a"), &RunOptions::default()).unwrap();
    let b = train(&cfg, &dir.path().join("b"), &RunOptions::default()).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.params, b.params);
    let mut other = cfg.clone();
    other.seed += 1;
    let c = train(&other, &dir.path().join("c"), &RunOptions::default()).unwrap();
    assert_ne!(a.losses, c.losses);
}

#[test]
fn non_conserving_run_doubles_message_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let m = blob_dataset(dir.path(), 30, 30);
    let mut cfg = small_train_config(m, 20);
    let on = train(&cfg, &dir.path().join("on"), &RunOptions::default()).unwrap();
    cfg.engine.conserve_momentum = false;
    let off = train(&cfg, &dir.path().join("off"), &RunOptions::default()).unwrap();
    assert!(on.message_evals > 0);
    assert_eq!(off.message_evals, 2 * on.message_evals);
    let a = read_metrics(&dir.path().join("on/metrics.csv")).unwrap();
    let b = read_metrics(&dir.path().join("off/metrics.csv")).unwrap();
    let csv = ablation_csv(&a, &b).unwrap();
    assert_eq!(csv.lines().count(), 1 + a.len());
}

#[test]
fn noise_has_requested_standard_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let m = blob_dataset(dir.path(), 150, 10);
    let manifest = Manifest::load(&m).unwrap();
    let entry = manifest.entries(Split::Train).next().unwrap();
    let traj = Trajectory::load(&manifest.resolve(entry)).unwrap();
    let clean = TrainSample::new(&traj, 0, 5, 3).unwrap();
    let sigma = 3e-3;
    let mut r = rng(1);
    let mut sq = 0.0;
    let mut count = 0usize;
    while count < 10_000 {
        let mut s = clean.clone();
        inject_noise(&mut s, sigma, &mut r).unwrap();
        assert_eq!(s.target_accel, clean.target_accel);
        assert_eq!(s.state.velocities, clean.state.velocities);
        for (i, kind) in s.state.kinds.iter().enumerate() {
            for k in 0..2 {
                let e = s.state.positions[2 * i + k] - clean.state.positions[2 * i + k];
                if kind.is_material() {
                    sq += e * e;
                    count += 1;
                } else {
                    assert_eq!(e, 0.0);
                }
            }
        }
    }
    let std = (sq / count as f64).sqrt();
    assert!((std / sigma - 1.0).abs() < 0.05, "std {std}");
}

#[test]
fn checkpoint_reproduces_validation_loss() {
    let dir = tempfile::tempdir().unwrap();
    let m = blob_dataset(dir.path(), 30, 30);
    let cfg = small_train_config(m, 25);
    let out = train(&cfg, &dir.path().join("run"), &RunOptions::default()).unwrap();
    let (engine, params, stats) = load_model(&out.checkpoint).unwrap();
    assert_eq!(engine, Engine::new(out.engine.clone()).unwrap());
    assert_eq!(params, out.params);
    assert_eq!(stats, out.stats);
    let manifest = Manifest::load(&cfg.manifest).unwrap();
    let split = LoadedSplit::load(&manifest, Split::ValUnseen, 3, engine.config.cutoff).unwrap();
    let sample = TrainSample::new(&split.trajectories[0], 0, 10, 3).unwrap();
    let a = validation_loss(&engine, &params, &stats, &split, std::slice::from_ref(&sample)).unwrap();
    let b = validation_loss(&engine, &out.params, &out.stats, &split, &[sample]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_train_split_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = blob_dataset(dir.path(), 20, 10);
    let mut manifest = Manifest::load(&m).unwrap();
    manifest.entries.retain(|e| e.split != Split::Train);
    manifest.save(&m).unwrap();
    let err = train(&small_train_config(m, 5), &dir.path().join("run"), &RunOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}
