//! Pinned end-to-end values and resumability on fixed synthetic data.

use std::fs;
use std::io::Write;

use atlas_core::bench::{build_bench, BenchBuildConfig, BenchFile};
use atlas_core::coordinator::{plan, profile, PlanConfig};
use atlas_core::data::{make_synthetic, split, Dataset, SplitSpec, SyntheticSpec};
use atlas_core::nn::{train_epochs, train_epochs_with, Init, MlpModel, Schedule, TrainConfig};
use atlas_core::proxies::{ProxyEvaluator, ProxyKind, ScoreConfig};
use atlas_core::space::SearchSpaceSpec;

/// Best validation AUC of the width-32 two-layer reference net at noise 0.1,
/// measured once.
const NOISY_REFERENCE_AUC: f64 = 0.8424;
/// Same net on noiseless labels, measured once.
const NOISELESS_REFERENCE_AUC: f64 = 0.9714;
const TOLERANCE: f64 = 0.02;

fn splits(noise: f64) -> (Dataset, Dataset) {
    let ds = make_synthetic(SyntheticSpec { n: 1000, d: 8, noise, seed: 7 }).unwrap();
    split(&ds, SplitSpec::default()).unwrap()
}

fn reference_best_auc(noise: f64) -> f64 {
    let (train, val) = splits(noise);
    let mut m = MlpModel::build(&[32, 32], 8, Init::he(0)).unwrap();
    let recs = train_epochs(&mut m, &train, &val, 20, TrainConfig::default()).unwrap();
    recs.iter().map(|r| r.val_auc).fold(0.0, f64::max)
}

#[test]
fn noisy_reference_net_reaches_pinned_auc() {
    let best = reference_best_auc(0.1);
    assert!(best >= NOISY_REFERENCE_AUC - TOLERANCE, "best val AUC {best}");
}

#[test]
fn noiseless_reference_net_reaches_pinned_auc() {
    let best = reference_best_auc(0.0);
    assert!(best >= NOISELESS_REFERENCE_AUC - TOLERANCE, "best val AUC {best}");
}

#[test]
fn warm_started_rounds_replay_one_long_run() {
    let (train, val) = splits(0.1);
    let cfg = TrainConfig::default();
    let mut whole = MlpModel::build(&[16, 8], 8, Init::he(3)).unwrap();
    let mut parts = whole.clone();
    let full = train_epochs_with(&mut whole, &train, &val, 6, cfg, Schedule { start_epoch: 0, horizon: 6 }).unwrap();
    let mut pieces = Vec::new();
    for (start, n) in [(0, 2), (2, 4)] {
        let sched = Schedule { start_epoch: start, horizon: 6 };
        pieces.extend(train_epochs_with(&mut parts, &train, &val, n, cfg, sched).unwrap());
    }
    assert_eq!(whole.params_flat(), parts.params_flat());
    let aucs = |r: &[atlas_core::nn::EpochRecord]| r.iter().map(|e| e.val_auc).collect::<Vec<_>>();
    assert_eq!(aucs(&full), aucs(&pieces));
}

fn same_curves(a: &BenchFile, b: &BenchFile) {
    assert_eq!(a.header.space, b.header.space);
    assert_eq!(a.header.dataset_sha256, b.header.dataset_sha256);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.records().iter().zip(b.records()) {
        assert_eq!(x.arch, y.arch);
        assert_eq!(x.val_auc, y.val_auc);
        assert_eq!(x.train_loss, y.train_loss);
        assert_eq!(x.val_loss, y.val_loss);
        assert_eq!(x.seed, y.seed);
    }
}

#[test]
fn interrupted_bench_build_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let space = SearchSpaceSpec::new(2, vec![4, 8, 16]).unwrap();
    let ds = make_synthetic(SyntheticSpec { n: 400, d: 5, noise: 0.1, seed: 11 }).unwrap();
    let cfg = BenchBuildConfig {
        epochs: 4,
        ..BenchBuildConfig::default()
    };
    let path = dir.path().join("bench.jsonl");
    let complete = build_bench(&space, &ds, &cfg, &path).unwrap();
    assert!(complete.is_complete());

    // keep the header and three records, then a torn fourth line
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut f = fs::File::create(&path).unwrap();
    for l in &lines[..4] {
        writeln!(f, "{l}").unwrap();
    }
    write!(f, "{}", &lines[4][..lines[4].len() / 2]).unwrap();
    drop(f);

    let resumed = build_bench(&space, &ds, &cfg, &path).unwrap();
    same_curves(&complete, &resumed);
    same_curves(&complete, &BenchFile::load(&path).unwrap());
}

#[test]
fn profiling_five_probes_gives_a_feasible_plan() {
    let (train, val) = splits(0.1);
    let space = SearchSpaceSpec::new(3, vec![4, 8, 16, 32]).unwrap();
    let eval = ProxyEvaluator::new(ProxyKind::ExpressFlow, ScoreConfig::default(), 8, Some(&train)).unwrap();
    let est = profile(&space, &train, &val, &eval, TrainConfig::default(), 5, 0, None).unwrap();
    assert_eq!(est.probe_count, 5);
    assert!(est.t1 > 0.0 && est.t2 > 0.0);
    let p = plan(est.t1, est.t2, 60.0, &PlanConfig::default()).unwrap();
    assert!(p.k >= 1);
    assert!(p.t1_total + p.t2_total <= 60.0);
}
