//! Budget-aware driver: profiles proxy and training costs, splits a time
//! budget between filtering and refinement, and runs both phases under a
//! hard deadline.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bench::BenchFile;
use crate::data::{split, Dataset};
use crate::error::{Error, Result};
use crate::filtering::{run_filtering, FilterConfig, FilterResult, ScoredArch};
use crate::nn::{train_epochs, Init, MlpModel, TrainConfig};
use crate::proxies::{ProxyEvaluator, ProxyKind, ScoreConfig};
use crate::refinement::{
    floor_log, param_cost, run_refinement, Clock, RealTrainer, RefineConfig, RefineResult, ReplayTrainer,
};
use crate::rng;
use crate::space::{ArchEncoding, SearchSpaceSpec};

/// Allowed overrun factor before a run counts as over budget.
pub const DEADLINE_ALLOWANCE: f64 = 1.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEstimate {
    /// Seconds per proxy evaluation.
    pub t1: f64,
    /// Seconds per training epoch.
    pub t2: f64,
    /// Epoch time model `t2_fixed + t2_per_param·params` fitted on the
    /// probes.
    pub t2_fixed: f64,
    pub t2_per_param: f64,
    pub probe_count: usize,
    pub probes: Vec<ScoredArch>,
}

impl ProfileEstimate {
    /// Probe with the highest proxy score.
    pub fn best_probe(&self) -> Option<&ScoredArch> {
        self.probes.iter().min_by(|a, b| crate::filtering::rank_order(a, b))
    }
}

/// The architectures probed for a given seed.
pub fn probe_architectures(space: &SearchSpaceSpec, probe_count: usize, seed: u64) -> Vec<ArchEncoding> {
    let base = rng::derive_seed(seed, "profile");
    (0..probe_count as u64)
        .map(|i| space.sample(rng::derive_index(base, i)))
        .collect()
}

/// Times one proxy score and one training epoch on each probe and
/// averages. Probing stops early (after at least one probe) when `deadline`
/// passes.
#[allow(clippy::too_many_arguments)]
pub fn profile(
    space: &SearchSpaceSpec,
    train: &Dataset,
    val: &Dataset,
    evaluator: &ProxyEvaluator,
    train_cfg: TrainConfig,
    probe_count: usize,
    seed: u64,
    deadline: Option<Instant>,
) -> Result<ProfileEstimate> {
    if probe_count == 0 {
        return Err(Error::InvalidParameter("probe count must be at least 1".into()));
    }
    let (mut t1, mut t2) = (Vec::new(), Vec::new());
    let mut sizes = Vec::new();
    let mut probes = Vec::new();
    for a in probe_architectures(space, probe_count, seed) {
        if !probes.is_empty() && deadline.is_some_and(|d| Instant::now() >= d) {
            log::info!("profiling stopped after {} probes", probes.len());
            break;
        }
        let start = Instant::now();
        let s = evaluator.score(&a)?;
        t1.push(start.elapsed().as_secs_f64().max(1e-9));
        probes.push(ScoredArch {
            arch: a.clone(),
            score: s.rank_key(),
            degenerate: s.degenerate,
        });

        let start = Instant::now();
        let tc = TrainConfig {
            seed: rng::derive_seed(train_cfg.seed, &a.key()),
            ..train_cfg
        };
        let trained = MlpModel::build(a.sizes(), train.d(), Init::he(tc.seed))
            .and_then(|mut m| train_epochs(&mut m, train, val, 1, tc));
        match trained {
            Ok(_) => {
                t2.push(start.elapsed().as_secs_f64().max(1e-9));
                sizes.push(param_cost(&a, train.d()));
            }
            Err(e) => log::warn!("profiling {a}: {e}"),
        }
    }
    if t2.is_empty() {
        return Err(Error::ProfileFailed);
    }
    let (t2_fixed, t2_per_param) = fit_epoch_time(&sizes, &t2);
    let est = ProfileEstimate {
        t1: t1.iter().sum::<f64>() / t1.len() as f64,
        t2: t2.iter().sum::<f64>() / t2.len() as f64,
        t2_fixed,
        t2_per_param,
        probe_count: probes.len(),
        probes,
    };
    if est.t1 >= est.t2 {
        log::warn!("proxy evaluation ({:.4}s) is not cheaper than an epoch ({:.4}s)", est.t1, est.t2);
    }
    Ok(est)
}

/// Least-squares fit of `t = a + b·p` with `a ≥ 0`, `b > 0`. Falls back to
/// the proportional fit `b = Σt / Σp` when the line would have a negative
/// intercept or a non-positive slope.
pub fn fit_epoch_time(params: &[f64], times: &[f64]) -> (f64, f64) {
    let n = params.len() as f64;
    let mp = params.iter().sum::<f64>() / n;
    let mt = times.iter().sum::<f64>() / n;
    let spp: f64 = params.iter().map(|p| (p - mp).powi(2)).sum();
    let spt: f64 = params.iter().zip(times).map(|(p, t)| (p - mp) * (t - mt)).sum();
    let proportional = (0.0, mt / mp);
    if spp <= 0.0 || spt <= 0.0 {
        return proportional;
    }
    let b = spt / spp;
    let a = mt - b * mp;
    if a >= 0.0 {
        (a, b)
    } else {
        proportional
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Target `M / K`.
    pub ratio: usize,
    pub u: usize,
    pub eta: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { ratio: 30, u: 2, eta: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanBranch {
    /// `M = ratio·K` with the largest feasible `K`.
    Full,
    /// `K = 1` with fewer than `ratio` proxy evaluations.
    SingleCandidate,
    /// No training fits: `K = 0`, the proxy-best architecture is returned.
    FilteringOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorPlan {
    pub t_max: f64,
    pub t1: f64,
    pub t2: f64,
    pub m: usize,
    pub k: usize,
    pub u: usize,
    pub eta: usize,
    pub ratio: usize,
    /// Planned filtering time `t1·M`.
    pub t1_total: f64,
    /// Planned refinement time.
    pub t2_total: f64,
    pub branch: PlanBranch,
}

/// Planned refinement epochs for `K` candidates: `K·U·⌊log_η K⌋`, and `U`
/// for a single candidate.
pub fn planned_epochs(k: usize, u: usize, eta: usize) -> usize {
    match k {
        0 => 0,
        1 => u,
        _ => k * u * floor_log(k, eta),
    }
}

fn cost(k: usize, t1: f64, t2: f64, cfg: &PlanConfig) -> f64 {
    t1 * (cfg.ratio * k) as f64 + t2 * planned_epochs(k, cfg.u, cfg.eta) as f64
}

/// Splits `t_max` between `M` proxy evaluations and the refinement of `K`
/// candidates.
pub fn plan(t1: f64, t2: f64, t_max: f64, cfg: &PlanConfig) -> Result<CoordinatorPlan> {
    for (name, v) in [("t1", t1), ("t2", t2), ("T_max", t_max)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    if cfg.ratio == 0 || cfg.u == 0 || cfg.eta < 2 {
        return Err(Error::InvalidParameter(format!(
            "need ratio ≥ 1, U ≥ 1, η ≥ 2; got {}, {}, {}",
            cfg.ratio, cfg.u, cfg.eta
        )));
    }
    if t_max < t1 {
        return Err(Error::BudgetTooSmall);
    }
    let fits = |k: usize| cost(k, t1, t2, cfg) <= t_max;
    let (m, k, branch) = if fits(1) {
        // galloping search for the last feasible K (cost is increasing)
        let mut lo = 1;
        let mut hi = 2;
        while fits(hi) {
            lo = hi;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if fits(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (cfg.ratio * lo, lo, PlanBranch::Full)
    } else if t1 + cfg.u as f64 * t2 <= t_max {
        let m = ((t_max - cfg.u as f64 * t2) / t1).floor() as usize;
        (m.max(1), 1, PlanBranch::SingleCandidate)
    } else {
        ((t_max / t1).floor().max(1.0) as usize, 0, PlanBranch::FilteringOnly)
    };
    Ok(CoordinatorPlan {
        t_max,
        t1,
        t2,
        m,
        k,
        u: cfg.u,
        eta: cfg.eta,
        ratio: cfg.ratio,
        t1_total: t1 * m as f64,
        t2_total: t2 * planned_epochs(k, cfg.u, cfg.eta) as f64,
        branch,
    })
}

impl CoordinatorPlan {
    /// Caps `M` at the space size and `K` at `M`.
    pub fn capped(mut self, space_size: u128) -> Self {
        if self.m as u128 > space_size {
            self.m = space_size as usize;
            self.t1_total = self.t1 * self.m as f64;
        }
        if self.k > self.m {
            self.k = self.m;
            self.t2_total = self.t2 * planned_epochs(self.k, self.u, self.eta) as f64;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasConfig {
    /// Budget in seconds (simulated seconds for replay runs).
    pub t_max: f64,
    pub kind: ProxyKind,
    pub score: ScoreConfig,
    pub plan: PlanConfig,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub workers: usize,
    pub probe_count: usize,
    pub pool_size: usize,
    pub sample_size: usize,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        Self {
            t_max: 60.0,
            kind: ProxyKind::ExpressFlow,
            score: ScoreConfig::default(),
            plan: PlanConfig::default(),
            batch_size: 64,
            lr: 0.1,
            seed: 0,
            workers: 1,
            probe_count: 5,
            pool_size: 10,
            sample_size: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub profile_s: f64,
    pub filter_s: f64,
    pub refine_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasReport {
    pub winner: ArchEncoding,
    /// Validation AUC observed for the winner during refinement.
    pub winner_val_auc: Option<f64>,
    /// Best recorded validation AUC of the winner, when a bench is known.
    pub winner_bench_auc: Option<f64>,
    pub plan: Option<CoordinatorPlan>,
    pub profile: Option<ProfileEstimate>,
    pub filter: Option<FilterResult>,
    pub refine: Option<RefineResult>,
    pub phases: PhaseTimes,
    pub elapsed_s: f64,
    pub t_max: f64,
    pub completed_within_budget: bool,
    pub notes: Vec<String>,
}

impl AtlasReport {
    pub fn within_allowance(&self) -> bool {
        self.elapsed_s <= DEADLINE_ALLOWANCE * self.t_max
    }
}

/// End-to-end search on real hardware time. `train` and `val` are the
/// training and validation splits; `t_max` counts from the call, including
/// profiling. `profile_hint` skips profiling.
pub fn run_atlas(
    space: &SearchSpaceSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &AtlasConfig,
    profile_hint: Option<ProfileEstimate>,
) -> Result<AtlasReport> {
    let start = Instant::now();
    if !(cfg.t_max.is_finite() && cfg.t_max > 0.0) {
        return Err(Error::InvalidParameter(format!("T_max must be positive, got {}", cfg.t_max)));
    }
    let deadline = start + Duration::from_secs_f64(cfg.t_max);
    let mut notes = Vec::new();
    let evaluator = ProxyEvaluator::new(cfg.kind, cfg.score, train.d(), Some(train))?;
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cfg.seed,
    };

    let est = match profile_hint {
        Some(p) => p,
        None => profile(
            space,
            train,
            val,
            &evaluator,
            train_cfg,
            cfg.probe_count,
            cfg.seed,
            Some(start + Duration::from_secs_f64(cfg.t_max / 2.0)),
        )?,
    };
    let profile_s = start.elapsed().as_secs_f64();
    let remaining = cfg.t_max - profile_s;

    let fallback = |notes: Vec<String>, est: ProfileEstimate| -> Result<AtlasReport> {
        let winner = est
            .best_probe()
            .map(|p| p.arch.clone())
            .unwrap_or_else(|| space.sample(cfg.seed));
        let elapsed = start.elapsed().as_secs_f64();
        Ok(AtlasReport {
            winner,
            winner_val_auc: None,
            winner_bench_auc: None,
            plan: None,
            profile: Some(est),
            filter: None,
            refine: None,
            phases: PhaseTimes {
                profile_s,
                filter_s: 0.0,
                refine_s: 0.0,
            },
            elapsed_s: elapsed,
            t_max: cfg.t_max,
            completed_within_budget: elapsed <= cfg.t_max,
            notes,
        })
    };
    if remaining < est.t1 {
        notes.push("budget exhausted by profiling; returning the best probe".into());
        return fallback(notes, est);
    }
    let p = plan(est.t1, est.t2, remaining, &cfg.plan)?.capped(space.size());
    if p.branch != PlanBranch::Full {
        notes.push(format!("degraded plan: {:?}", p.branch));
    }

    let fstart = Instant::now();
    let fcfg = FilterConfig {
        m: p.m,
        k: p.k.max(1),
        pool_size: cfg.pool_size,
        sample_size: cfg.sample_size,
        workers: cfg.workers,
        seed: cfg.seed,
        ..FilterConfig::default()
    };
    // Filtering may use slack but never the planned refinement time.
    let fdeadline = deadline
        .checked_sub(Duration::from_secs_f64(p.t2_total))
        .unwrap_or(fstart)
        .max(fstart + Duration::from_secs_f64(est.t1));
    let filter = run_filtering(space, &evaluator, &fcfg, Some(fdeadline))?;
    if filter.stopped_early {
        notes.push(format!("filtering stopped at the deadline after {} of {} evaluations", filter.explored, p.m));
    }
    let filter_s = fstart.elapsed().as_secs_f64();

    let rstart = Instant::now();
    let (winner, winner_val_auc, refine) = if p.k == 0 {
        (filter.top_k[0].arch.clone(), None, None)
    } else {
        let cands: Vec<ArchEncoding> = filter.top_k.iter().take(p.k).map(|s| s.arch.clone()).collect();
        let trainer = RealTrainer {
            train,
            val,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            seed: cfg.seed,
            cost_offset: 0.0,
        };
        // cost weight = parameters + fitted overhead, in seconds per t2_per_param
        let trainer = RealTrainer {
            cost_offset: est.t2_fixed / est.t2_per_param,
            ..trainer
        };
        let rcfg = RefineConfig {
            u: p.u,
            eta: p.eta,
            workers: cfg.workers,
            budget: Some(deadline.saturating_duration_since(rstart).as_secs_f64()),
            t2_estimate: Some(est.t2_per_param),
            clock: Clock::Wall,
        };
        let r = run_refinement(&cands, &trainer, &rcfg)?;
        if r.skipped_rounds > 0 {
            notes.push(format!("skipped {} refinement round(s) at the deadline", r.skipped_rounds));
        }
        (r.winner.clone(), r.winner_val_auc, Some(r))
    };
    let refine_s = rstart.elapsed().as_secs_f64();
    let elapsed = start.elapsed().as_secs_f64();
    Ok(AtlasReport {
        winner,
        winner_val_auc,
        winner_bench_auc: None,
        plan: Some(p),
        profile: Some(est),
        filter: Some(filter),
        refine,
        phases: PhaseTimes {
            profile_s,
            filter_s,
            refine_s,
        },
        elapsed_s: elapsed,
        t_max: cfg.t_max,
        completed_within_budget: elapsed <= cfg.t_max,
        notes,
    })
}

/// Search against a bench in simulated time: each proxy evaluation costs
/// `t1` and each training epoch `t2` simulated seconds, proxies are computed
/// for real and training replays the recorded curves. `dataset` is the
/// dataset the bench was built on.
pub fn run_atlas_simulated(
    bench: &BenchFile,
    dataset: &Dataset,
    cfg: &AtlasConfig,
    t1: f64,
    t2: f64,
) -> Result<AtlasReport> {
    let start = Instant::now();
    let space = &bench.header.space;
    let (train, _) = split(dataset, bench.header.split_spec())?;
    let evaluator = ProxyEvaluator::new(cfg.kind, cfg.score, train.d(), Some(&train))?;
    let p = plan(t1, t2, cfg.t_max, &cfg.plan)?.capped(space.size());
    let mut notes = Vec::new();
    if p.branch != PlanBranch::Full {
        notes.push(format!("degraded plan: {:?}", p.branch));
    }
    let fcfg = FilterConfig {
        m: p.m,
        k: p.k.max(1),
        pool_size: cfg.pool_size,
        sample_size: cfg.sample_size,
        workers: cfg.workers,
        seed: cfg.seed,
        ..FilterConfig::default()
    };
    let filter = run_filtering(space, &evaluator, &fcfg, None)?;
    let filter_s = t1 * filter.explored as f64;
    let (winner, winner_val_auc, refine) = if p.k == 0 {
        (filter.top_k[0].arch.clone(), None, None)
    } else {
        let cands: Vec<ArchEncoding> = filter.top_k.iter().take(p.k).map(|s| s.arch.clone()).collect();
        let rcfg = RefineConfig {
            u: p.u,
            eta: p.eta,
            workers: cfg.workers,
            budget: Some(cfg.t_max - filter_s),
            t2_estimate: Some(t2),
            clock: Clock::Simulated,
        };
        let r = run_refinement(&cands, &ReplayTrainer { bench, t2: Some(t2) }, &rcfg)?;
        (r.winner.clone(), r.winner_val_auc, Some(r))
    };
    let refine_s = refine.as_ref().map_or(0.0, |r| r.wall_time_s);
    let elapsed = filter_s + refine_s;
    log::debug!("simulated atlas run took {:?} of real time", start.elapsed());
    Ok(AtlasReport {
        winner_bench_auc: bench.record(&winner).map(|r| r.best_val_auc()),
        winner,
        winner_val_auc,
        plan: Some(p),
        profile: None,
        filter: Some(filter),
        refine,
        phases: PhaseTimes {
            profile_s: 0.0,
            filter_s,
            refine_s,
        },
        elapsed_s: elapsed,
        t_max: cfg.t_max,
        completed_within_budget: elapsed <= cfg.t_max,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let p = plan(0.002, 0.5, 60.0, &PlanConfig::default()).unwrap();
        assert_eq!((p.k, p.m), (15, 450));
        assert_eq!(p.branch, PlanBranch::Full);
        assert!(p.t1_total + p.t2_total <= 60.0);
    }

    #[test]
    fn one_score_budget_is_filtering_only() {
        let p = plan(0.5, 2.0, 0.5, &PlanConfig::default()).unwrap();
        assert_eq!((p.m, p.k, p.branch), (1, 0, PlanBranch::FilteringOnly));
    }

    #[test]
    fn below_one_score_is_an_error() {
        assert!(matches!(
            plan(1.0, 2.0, 0.5, &PlanConfig::default()),
            Err(Error::BudgetTooSmall)
        ));
        assert!(plan(0.0, 1.0, 1.0, &PlanConfig::default()).is_err());
    }

    #[test]
    fn single_candidate_branch() {
        // 30·t1 + U·t2 = 34 > 10, but t1 + U·t2 = 5 fits
        let p = plan(1.0, 2.0, 10.0, &PlanConfig::default()).unwrap();
        assert_eq!((p.m, p.k, p.branch), (6, 1, PlanBranch::SingleCandidate));
        assert!(p.t1_total + p.t2_total <= 10.0);
    }

    #[test]
    fn minimum_feasible_plan_has_a_candidate() {
        let (t1, t2) = (0.01, 0.3);
        let p = plan(t1, t2, 30.0 * t1 + 2.0 * t2, &PlanConfig::default()).unwrap();
        assert_eq!((p.k, p.m), (1, 30));
    }

    #[test]
    fn caps_to_space() {
        let p = plan(0.002, 0.5, 60.0, &PlanConfig::default()).unwrap().capped(8);
        assert_eq!((p.m, p.k), (8, 8));
    }

    #[test]
    fn epoch_time_fits() {
        let (a, b) = fit_epoch_time(&[100.0, 200.0, 400.0], &[0.3, 0.5, 0.9]);
        assert!((a - 0.1).abs() < 1e-12 && (b - 0.002).abs() < 1e-12);
        assert_eq!(fit_epoch_time(&[100.0, 200.0], &[0.5, 0.4]), (0.0, 0.45 / 150.0));
        let (a, b) = fit_epoch_time(&[100.0, 200.0], &[0.1, 0.4]);
        assert_eq!(a, 0.0);
        assert!((b - 0.5 / 300.0).abs() < 1e-15);
    }

    #[test]
    fn probes_depend_only_on_seed() {
        let s: SearchSpaceSpec = "4,8,16,32 x3".parse().unwrap();
        assert_eq!(probe_architectures(&s, 5, 1), probe_architectures(&s, 5, 1));
        assert_ne!(probe_architectures(&s, 5, 1), probe_architectures(&s, 5, 2));
    }
}
