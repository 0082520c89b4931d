use super::*;
use crate::autonet::Placement;
use crate::datagen::{gen_continual, Schedule};

fn tiny_cfg(placement: Placement) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.dataset.schedule = Schedule::BothShift;
    c.dataset.n = 10;
    c.dataset.stages = 3;
    c.dataset.seed = 4;
    c.model.placement = placement;
    c.optim.epochs = 2;
    c.optim.batch_size = 4;
    c.eval.batch_size = 3;
    c.seeds = vec![1];
    c
}

fn strip_clock(mut r: RunResult) -> RunResult {
    r.wall_clock_secs = 0.0;
    r
}

#[test]
fn no_replay_and_state_carry_over() {
    let cfg = tiny_cfg(Placement::AfterEachConvAndPrelogits);
    let ds = load_dataset(&cfg).unwrap();
    let run = run_continual(&cfg, &ds, 1, false).unwrap();
    let n_train: Vec<u64> = (0..3).map(|s| ds.split_indices(s, true).len() as u64).collect();
    for s in 0..3 {
        assert_eq!(run.data_reads[s], n_train[s] * 2);
    }
    let mut cum = 0;
    for s in 0..3 {
        cum += n_train[s] * 2;
        assert_eq!(run.rmdn_seen[s], cum);
    }
    assert_eq!(run.losses.len(), 6);
    assert!(run.distance.is_some() && run.gem.is_some());
    assert_eq!(run.dcor.len(), 3 * 3 * 2);
    assert!(run.r.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn rows_ignore_later_stages() {
    let cfg = tiny_cfg(Placement::PrelogitsOnly);
    let ds = load_dataset(&cfg).unwrap();
    let mut altered = ds.clone();
    let other = gen_continual(Schedule::BothShift, 3, 10, 99).unwrap();
    let n = ds.image_len();
    for i in 0..ds.len() {
        if ds.stage_ids[i] == 2 && ds.is_train[i] {
            altered.images[i * n..(i + 1) * n].copy_from_slice(other.image(i));
        }
    }
    let a = run_continual(&cfg, &ds, 1, false).unwrap();
    let b = run_continual(&cfg, &altered, 1, false).unwrap();
    assert_eq!(a.r.row(0), b.r.row(0));
    assert_eq!(a.r.row(1), b.r.row(1));
}

#[test]
fn runs_are_deterministic() {
    let cfg = tiny_cfg(Placement::AfterEachConvAndPrelogits);
    let ds = load_dataset(&cfg).unwrap();
    let a = strip_clock(run_continual(&cfg, &ds, 3, true).unwrap());
    let b = strip_clock(run_continual(&cfg, &ds, 3, true).unwrap());
    assert_eq!(a, b);
}

#[test]
fn single_stage_has_no_transfer_metrics() {
    let mut cfg = tiny_cfg(Placement::None);
    cfg.dataset.schedule = Schedule::Static;
    cfg.dataset.stages = 1;
    let ds = load_dataset(&cfg).unwrap();
    let run = run_continual(&cfg, &ds, 0, false).unwrap();
    assert_eq!(run.r.shape(), (1, 1));
    assert!(run.distance.is_none());
    assert_eq!(run_metrics(&run).len(), 1);
}

#[test]
fn sweep_at_full_intensity_matches_r() {
    let cfg = tiny_cfg(Placement::AfterEachConvAndPrelogits);
    let ds = load_dataset(&cfg).unwrap();
    let run = run_continual(&cfg, &ds, 2, true).unwrap();
    let rows = delta_sweep(&cfg, &ds, 2, &run.snapshots, &[0.0, 1.0]).unwrap();
    assert_eq!(rows.len(), 3 * 3 * 2);
    for row in rows.iter().filter(|r| r.delta == 1.0) {
        assert_eq!(row.accuracy, run.r[(row.stage_trained, row.stage_eval)]);
    }
    assert!(delta_sweep(&cfg, &ds, 2, &run.snapshots, &[1.5]).is_err());
}

#[test]
fn multi_seed_aggregation() {
    let mut cfg = tiny_cfg(Placement::PrelogitsOnly);
    cfg.optim.epochs = 1;
    let ds = load_dataset(&cfg).unwrap();
    let one = multi_seed(&cfg, &ds, false).unwrap();
    assert!(one.summary.iter().all(|m| m.std == 0.0));
    cfg.seeds = vec![5, 5];
    let same = multi_seed(&cfg, &ds, false).unwrap();
    assert!(same.summary.iter().all(|m| m.std == 0.0));
    assert_eq!(same.runs.len(), 2);
    assert_eq!(same.metric("accd").unwrap().mean, run_metrics(&same.runs[0])[1].1);
}

#[test]
fn divergence_is_reported_with_position() {
    let mut cfg = tiny_cfg(Placement::None);
    let mut ds = load_dataset(&cfg).unwrap();
    let bad = ds.split_indices(1, true)[0];
    let n = ds.image_len();
    ds.images[bad * n] = f64::NAN;
    match run_continual(&cfg, &ds, 0, false) {
        Err(e @ HarnessError::Divergence { stage: 1, epoch: 0, .. }) => assert!(e.is_numerical()),
        other => panic!("expected divergence, got {other:?}"),
    }
    cfg.seeds = vec![0, 1];
    match multi_seed(&cfg, &ds, false) {
        Err(HarnessError::SeedFailures { failed, completed }) => {
            assert_eq!(failed.iter().map(|f| f.0).collect::<Vec<_>>(), vec![0, 1]);
            assert!(completed.is_empty());
        }
        other => panic!("expected seed failures, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = tiny_cfg(Placement::AfterEachConvAndPrelogits);
    let ds = load_dataset(&cfg).unwrap();
    let run = run_continual(&cfg, &ds, 6, true).unwrap();
    let ck = Checkpoint {
        config: cfg.clone(),
        seed: 6,
        snapshots: run.snapshots.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.rmdn");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let mut m = model_from_snapshot(&cfg, &ds, 6, &back.snapshots[2]).unwrap();
    assert_eq!(rmdn_widths(&m), vec![12544, 3200, 84]);
    let idx = ds.split_indices(0, false);
    let imgs: Vec<Vec<f64>> = idx.iter().map(|&i| ds.image(i).to_vec()).collect();
    let out = evaluate(&mut m, &ds, &idx, &imgs, 1.0, 8, false).unwrap();
    assert_eq!(out.rates.accuracy, run.r[(2, 0)]);
}
