//! Library results checked against independent reference computations.

mod common;

use atlas_core::bench::{build_bench, BenchBuildConfig, BenchFile};
use atlas_core::data::{make_synthetic, SyntheticSpec};
use atlas_core::filtering::{run_filtering, FilterConfig};
use atlas_core::matrix::Matrix;
use atlas_core::nn::{backward, forward, sigmoid, BnMode, LossKind, MlpModel};
use atlas_core::proxies::{
    jacobian, ntk_gram, score_expressflow, score_proxy, trajectory_length, ProxyEvaluator,
    ProxyKind, Recalibration, ScoreConfig,
};
use atlas_core::refinement::{run_refinement, Clock, RefineConfig, ReplayTrainer};
use atlas_core::space::{ArchEncoding, SearchSpaceSpec};
use common::{random_batch, random_model, reference_jacobian, reference_outputs, RefBn};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn modes() -> [(BnMode, RefBn); 2] {
    [(BnMode::BatchStats, RefBn::BatchStats), (BnMode::Bypass, RefBn::Bypass)]
}

#[test]
fn forward_matches_reference() {
    for seed in 0..20 {
        let m = random_model(seed, 3, 8);
        let x = random_batch(6, m.input_dim(), seed + 100).x;
        for (mode, rmode) in modes() {
            let got = forward(&m, &x, mode).unwrap().output;
            let want: Vec<f64> = reference_outputs(&m, &m.params_flat(), &x, rmode);
            for (g, w) in got.iter().zip(&want) {
                assert!(rel_err(*g, *w) < 1e-10, "seed {seed} {mode:?}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn gradients_match_reference_jacobian() {
    for seed in 0..20 {
        let m = random_model(seed, 3, 6);
        let batch = random_batch(5, m.input_dim(), seed + 200);
        for (mode, rmode) in modes() {
            let j = reference_jacobian(&m, &batch.x, rmode);
            let t = forward(&m, &batch.x, mode).unwrap();
            let b = batch.len() as f64;

            let sum = backward(&m, &t, LossKind::SumOutput, None, false).unwrap().flat();
            let bce = backward(&m, &t, LossKind::Bce, Some(&batch.y), false).unwrap().flat();
            for p in 0..sum.len() {
                let want_sum: f64 = j.iter().map(|row| row[p]).sum();
                let want_bce: f64 = j
                    .iter()
                    .zip(&t.output)
                    .zip(&batch.y)
                    .map(|((row, &s), &y)| (sigmoid(s) - f64::from(y)) * row[p] / b)
                    .sum();
                assert!((sum[p] - want_sum).abs() < 1e-9 * (1.0 + want_sum.abs()), "seed {seed} p {p}");
                assert!((bce[p] - want_bce).abs() < 1e-9 * (1.0 + want_bce.abs()), "seed {seed} p {p}");
            }
        }
    }
}

#[test]
fn jacobian_and_ntk_match_reference() {
    for seed in 0..10 {
        let m = random_model(seed, 3, 6);
        let b = 2 + (seed as usize % 7);
        let batch = random_batch(b, m.input_dim(), seed + 300);
        let j = reference_jacobian(&m, &batch.x, RefBn::BatchStats);

        let got = jacobian(&m, &batch.x).unwrap();
        for (i, row) in j.iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                assert!((got.get(i, p) - v).abs() < 1e-9 * (1.0 + v.abs()));
            }
        }

        let gram = ntk_gram(&m, &batch.x).unwrap();
        let mut trace = 0.0;
        for a in 0..b {
            for c in 0..b {
                let want: f64 = j[a].iter().zip(&j[c]).map(|(x, y)| x * y).sum();
                assert!(rel_err(gram.get(a, c), want) < 1e-9);
                if a == c {
                    trace += want;
                }
            }
        }
        let s = score_proxy(ProxyKind::NtkTrace, &m, &batch, &ScoreConfig::default()).unwrap();
        assert!(rel_err(s.value, trace) < 1e-8, "seed {seed}: {} vs {trace}", s.value);
    }
}

#[test]
fn expressflow_is_linear_in_head_scale() {
    // Scaling the output weights by c > 0 scales every ∂L/∂z by c and leaves
    // the activations unchanged.
    let cfg = ScoreConfig {
        recalibration: Recalibration::None,
        ..ScoreConfig::default()
    };
    for seed in 0..20 {
        let m = random_model(seed, 3, 12);
        let base = score_expressflow(&m, None, &cfg).unwrap().value;
        for c in [0.5, 3.0] {
            let mut scaled = m.clone();
            let head = scaled.weights.len() - 1;
            scaled.weights[head].map_inplace(|w| w * c);
            let v = score_expressflow(&scaled, None, &cfg).unwrap().value;
            assert!(rel_err(v, c * base) < 1e-12, "seed {seed}, c {c}: {v} vs {}", c * base);
        }
    }
}

#[test]
fn trajectory_grows_with_depth_on_positive_nets() {
    let mut nondecreasing = 0;
    for seed in 0..100 {
        let m = MlpModel::build(&[16, 16, 16, 16], 8, atlas_core::nn::Init::he(seed))
            .unwrap()
            .with_abs_weights();
        let lengths: Vec<f64> = (1..=4)
            .map(|l| trajectory_length(&m, l, 16).unwrap().length)
            .collect();
        if lengths.windows(2).all(|w| w[1] >= w[0]) {
            nondecreasing += 1;
        }
    }
    assert!(nondecreasing >= 90, "{nondecreasing}/100 nets nondecreasing");
}

#[test]
fn trajectory_matches_hand_computed_polyline() {
    // Both neurons stay active on [0, 1], so the image of the straight path
    // is itself straight and its length is the endpoint distance.
    let mut m = MlpModel::build(&[2], 3, atlas_core::nn::Init::he(0)).unwrap();
    m.weights[0] = Matrix::from_rows(&[vec![1.0, 2.0, -0.5], vec![-1.0, 0.5, 0.25]]);
    m.biases[0] = vec![0.0, 0.5];
    // z(t) = (2.5t, 0.5 − 0.25t)
    let a: [f64; 2] = [0.0, 0.5];
    let b = [2.5, 0.25];
    let want = ((b[0] - a[0]) * (b[0] - a[0]) + (b[1] - a[1]) * (b[1] - a[1])).sqrt();
    let got = trajectory_length(&m, 1, 16).unwrap().length;
    assert!(rel_err(got, want) < 1e-12, "{got} vs {want}");
}

#[test]
fn filtering_matches_exhaustive_scoring() {
    let space = SearchSpaceSpec::new(2, vec![4, 8]).unwrap();
    let eval = ProxyEvaluator::new(ProxyKind::ExpressFlow, ScoreConfig::default(), 6, None).unwrap();
    let mut all: Vec<(f64, ArchEncoding)> = space
        .enumerate()
        .unwrap()
        .into_iter()
        .map(|a| (eval.score(&a).unwrap().value, a))
        .collect();
    all.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(&y.1)));
    let want: Vec<ArchEncoding> = all.iter().take(2).map(|(_, a)| a.clone()).collect();
    for seed in 0..5 {
        for workers in [1, 3] {
            let cfg = FilterConfig {
                m: 4,
                k: 2,
                pool_size: 3,
                sample_size: 2,
                workers,
                seed,
                ..FilterConfig::default()
            };
            let r = run_filtering(&space, &eval, &cfg, None).unwrap();
            let got: Vec<ArchEncoding> = r.top_k.iter().map(|s| s.arch.clone()).collect();
            assert_eq!(got, want, "seed {seed}, workers {workers}");
            assert_eq!(r.explored, 4);
        }
    }
}

fn small_bench() -> BenchFile {
    let dir = tempfile::tempdir().unwrap();
    let space = SearchSpaceSpec::new(2, vec![4, 8, 16]).unwrap();
    let ds = make_synthetic(SyntheticSpec { n: 600, d: 6, noise: 0.1, seed: 3 }).unwrap();
    let cfg = BenchBuildConfig {
        epochs: 8,
        ..BenchBuildConfig::default()
    };
    build_bench(&space, &ds, &cfg, &dir.path().join("bench.jsonl")).unwrap()
}

/// Successive halving replayed by hand over the recorded curves.
fn replay_winner(bench: &BenchFile, candidates: &[ArchEncoding], u: usize) -> ArchEncoding {
    let mut alive = candidates.to_vec();
    let mut done = 0;
    let mut round_epochs = u;
    loop {
        done += round_epochs;
        let at = done.min(bench.header.epochs) - 1;
        let mut ranked: Vec<(f64, f64, ArchEncoding)> = alive
            .iter()
            .map(|a| {
                let r = bench.get(a).unwrap();
                (r.val_auc[at], r.train_loss[0] - r.train_loss[at], a.clone())
            })
            .collect();
        ranked.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then_with(|| y.1.total_cmp(&x.1))
                .then_with(|| x.2.cmp(&y.2))
        });
        if ranked.len() <= 2 {
            return ranked[0].2.clone();
        }
        alive = ranked.into_iter().take(alive.len() / 2).map(|r| r.2).collect();
        round_epochs *= 2;
    }
}

#[test]
fn refinement_replay_matches_recorded_curves() {
    let bench = small_bench();
    assert!(bench.records().iter().all(|r| !r.diverged));
    let archs = bench.header.space.enumerate().unwrap();
    let trainer = ReplayTrainer { bench: &bench, t2: Some(1.0) };
    let cfg = RefineConfig {
        clock: Clock::Simulated,
        ..RefineConfig::default()
    };
    let n = archs.len();
    let mut checked = 0;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let cands = [a, b, c, d].map(|i| archs[i].clone());
                    let r = run_refinement(&cands, &trainer, &cfg).unwrap();
                    assert_eq!(r.winner, replay_winner(&bench, &cands, 2), "{cands:?}");
                    assert_eq!(r.total_epochs, 16);
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 126);
}
