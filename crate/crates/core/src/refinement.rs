//! Successive halving over the filtered candidates with warm-started
//! training.
//!
//! Round `r` trains each of the `⌈K/η^r⌉` survivors for `U·η^r` more epochs
//! and keeps the best `⌈s/η⌉`; after `⌊log_η K⌋` rounds the leader wins.
//! Candidates continue from their checkpoints, and every candidate follows a
//! cosine schedule over the horizon `U·η^R`.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bench::BenchFile;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{evaluate, train_epochs_with, Init, MlpModel, Schedule, TrainConfig};
use crate::par::{self, Execution};
use crate::rng;
use crate::space::ArchEncoding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HalvingSchedule {
    pub k: usize,
    pub u: usize,
    pub eta: usize,
}

impl HalvingSchedule {
    pub fn new(k: usize, u: usize, eta: usize) -> Result<Self> {
        if k == 0 || u == 0 || eta < 2 {
            return Err(Error::InvalidParameter(format!(
                "halving needs K ≥ 1, U ≥ 1, η ≥ 2; got K={k}, U={u}, η={eta}"
            )));
        }
        Ok(Self { k, u, eta })
    }

    /// `⌊log_η K⌋`.
    pub fn log_rounds(&self) -> usize {
        floor_log(self.k, self.eta)
    }

    /// Rounds actually trained: `⌊log_η K⌋`, or one round when `K = 1`.
    pub fn rounds(&self) -> usize {
        self.log_rounds().max(1)
    }

    pub fn survivors(&self, round: usize) -> usize {
        self.k.div_ceil(self.eta.pow(round as u32))
    }

    pub fn epochs(&self, round: usize) -> usize {
        self.u * self.eta.pow(round as u32)
    }

    pub fn total_epochs(&self) -> usize {
        (0..self.rounds()).map(|r| self.survivors(r) * self.epochs(r)).sum()
    }

    /// `K·U·⌊log_η K⌋`, the planner's cost model in epochs.
    pub fn planned_epochs(&self) -> usize {
        self.k * self.u * self.log_rounds()
    }

    /// Cosine horizon `U·η^R`.
    pub fn horizon(&self) -> usize {
        self.u * self.eta.pow(self.log_rounds() as u32)
    }
}

/// `⌊log_b n⌋` in integers.
pub fn floor_log(n: usize, b: usize) -> usize {
    let mut r = 0;
    let mut p = b;
    while p <= n {
        r += 1;
        match p.checked_mul(b) {
            Some(q) => p = q,
            None => break,
        }
    }
    r
}

/// Result of training one candidate for one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub val_auc: f64,
    /// Initial training loss minus the latest one.
    pub loss_decrease: f64,
    /// Seconds charged for the round (wall or simulated).
    pub seconds: f64,
    pub diverged: bool,
}

/// Trains candidates incrementally.
pub trait CandidateTrainer: Sync {
    type State: Send;

    fn init(&self, enc: &ArchEncoding) -> Result<Self::State>;

    /// Relative per-epoch cost of `enc`, used to budget rounds.
    fn cost(&self, _enc: &ArchEncoding) -> f64 {
        1.0
    }

    /// Trains `epochs` further epochs under `sched`.
    fn train(&self, state: &mut Self::State, epochs: usize, sched: Schedule) -> Result<RoundOutcome>;
}

/// Real training with per-candidate seeds derived from the encoding.
pub struct RealTrainer<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fixed per-epoch overhead expressed in parameters, added to each
    /// candidate's cost.
    pub cost_offset: f64,
}

pub struct RealState {
    model: MlpModel,
    cfg: TrainConfig,
    initial_loss: f64,
    latest_loss: f64,
    diverged: bool,
}

impl CandidateTrainer for RealTrainer<'_> {
    type State = RealState;

    /// Parameter count plus overhead: epoch time is affine in the size of
    /// the dense products.
    fn cost(&self, enc: &ArchEncoding) -> f64 {
        param_cost(enc, self.train.d()) + self.cost_offset
    }

    fn init(&self, enc: &ArchEncoding) -> Result<RealState> {
        let seed = rng::derive_seed(self.seed, &enc.key());
        let model = MlpModel::build(enc.sizes(), self.train.d(), Init::he(seed))?;
        let (initial_loss, _) = evaluate(&model, self.train)?;
        Ok(RealState {
            model,
            cfg: TrainConfig {
                batch_size: self.batch_size,
                lr: self.lr,
                seed,
            },
            initial_loss,
            latest_loss: initial_loss,
            diverged: false,
        })
    }

    fn train(&self, s: &mut RealState, epochs: usize, sched: Schedule) -> Result<RoundOutcome> {
        let start = Instant::now();
        if !s.diverged {
            match train_epochs_with(&mut s.model, self.train, self.val, epochs, s.cfg, sched) {
                Ok(recs) => {
                    let last = recs.last().expect("epochs ≥ 1");
                    s.latest_loss = last.train_loss;
                    return Ok(RoundOutcome {
                        val_auc: last.val_auc,
                        loss_decrease: s.initial_loss - s.latest_loss,
                        seconds: start.elapsed().as_secs_f64(),
                        diverged: false,
                    });
                }
                Err(Error::NonFinite(msg)) => {
                    log::warn!("candidate diverged: {msg}");
                    s.diverged = true;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(RoundOutcome {
            val_auc: f64::NEG_INFINITY,
            loss_decrease: f64::NEG_INFINITY,
            seconds: start.elapsed().as_secs_f64(),
            diverged: true,
        })
    }
}

/// Trainable parameter count of `enc` on `d` inputs, as a cost weight.
pub fn param_cost(enc: &ArchEncoding, d: usize) -> f64 {
    let mut fan_in = d;
    let mut n = 0;
    for &w in enc.sizes() {
        n += (fan_in + 1) * w + 2 * w;
        fan_in = w;
    }
    (n + fan_in + 1) as f64
}

/// Replays recorded bench curves instead of training. The reported AUC is
/// the recorded validation AUC at the cumulative epoch count (clamped to the
/// recorded length). Time is charged at `t2` seconds per epoch when set, or
/// from the recorded epoch times otherwise.
pub struct ReplayTrainer<'a> {
    pub bench: &'a BenchFile,
    pub t2: Option<f64>,
}

pub struct ReplayState {
    enc: ArchEncoding,
    epochs_done: usize,
}

impl CandidateTrainer for ReplayTrainer<'_> {
    type State = ReplayState;

    fn init(&self, enc: &ArchEncoding) -> Result<ReplayState> {
        self.bench.get(enc)?;
        Ok(ReplayState {
            enc: enc.clone(),
            epochs_done: 0,
        })
    }

    fn train(&self, s: &mut ReplayState, epochs: usize, _sched: Schedule) -> Result<RoundOutcome> {
        let r = self.bench.get(&s.enc)?;
        let n = r.val_auc.len();
        let before = s.epochs_done;
        s.epochs_done += epochs;
        let at = s.epochs_done.min(n) - 1;
        let seconds = match self.t2 {
            Some(t2) => t2 * epochs as f64,
            None => (before..s.epochs_done).map(|e| r.epoch_time_s[e.min(n - 1)]).sum(),
        };
        Ok(RoundOutcome {
            val_auc: if r.diverged { f64::NEG_INFINITY } else { r.val_auc[at] },
            loss_decrease: r.train_loss[0] - r.train_loss[at],
            seconds,
            diverged: r.diverged,
        })
    }
}

/// How elapsed refinement time is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clock {
    Wall,
    /// Sum of the seconds the trainer charges.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub u: usize,
    pub eta: usize,
    pub workers: usize,
    /// Seconds available for the whole refinement; rounds that would not
    /// fit are skipped.
    pub budget: Option<f64>,
    /// Seconds per epoch per unit of [`CandidateTrainer::cost`], used to
    /// cost the first round before anything has been measured.
    pub t2_estimate: Option<f64>,
    pub clock: Clock,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            u: 2,
            eta: 2,
            workers: 1,
            budget: None,
            t2_estimate: None,
            clock: Clock::Wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub arch: ArchEncoding,
    pub val_auc: f64,
    pub cumulative_epochs: usize,
    pub loss_decrease: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub epochs_each: usize,
    /// Ranked best first.
    pub leaderboard: Vec<RoundEntry>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub winner: ArchEncoding,
    /// The winner's latest validation AUC; `None` when no round ran.
    pub winner_val_auc: Option<f64>,
    pub rounds: Vec<RoundReport>,
    pub total_epochs: usize,
    pub schedule: HalvingSchedule,
    pub skipped_rounds: usize,
    pub wall_time_s: f64,
}

fn available_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn entry_order(a: &RoundEntry, b: &RoundEntry) -> Ordering {
    a.diverged
        .cmp(&b.diverged)
        .then_with(|| b.val_auc.total_cmp(&a.val_auc))
        .then_with(|| b.loss_decrease.total_cmp(&a.loss_decrease))
        .then_with(|| a.arch.cmp(&b.arch))
}

/// Runs successive halving over `candidates` (best proxy score first; the
/// first candidate is returned if no round fits the budget).
pub fn run_refinement<T: CandidateTrainer>(
    candidates: &[ArchEncoding],
    trainer: &T,
    cfg: &RefineConfig,
) -> Result<RefineResult> {
    let start = Instant::now();
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("refinement needs at least one candidate".into()));
    }
    let schedule = HalvingSchedule::new(candidates.len(), cfg.u, cfg.eta)?;
    let exec = Execution::from_workers(cfg.workers);
    let horizon = schedule.horizon();

    let states = candidates
        .iter()
        .map(|c| trainer.init(c))
        .collect::<Result<Vec<_>>>()?;
    let mut alive: Vec<(ArchEncoding, T::State, usize)> = candidates
        .iter()
        .cloned()
        .zip(states)
        .map(|(a, s)| (a, s, 0))
        .collect();

    let mut elapsed = match cfg.clock {
        Clock::Wall => start.elapsed().as_secs_f64(),
        Clock::Simulated => 0.0,
    };
    let mut unit_cost = cfg.t2_estimate;
    let mut rounds = Vec::new();
    let mut total_epochs = 0;
    let mut skipped = 0;
    for r in 0..schedule.rounds() {
        let epochs = schedule.epochs(r);
        debug_assert_eq!(alive.len(), schedule.survivors(r));
        let weight: f64 = alive.iter().map(|(a, _, _)| trainer.cost(a)).sum();
        let parallel = match cfg.clock {
            Clock::Wall => exec.workers().min(available_cores()).min(alive.len()),
            Clock::Simulated => 1,
        } as f64;
        if let (Some(budget), Some(unit)) = (cfg.budget, unit_cost) {
            let cost = unit * weight * epochs as f64 / parallel;
            if elapsed + cost > budget {
                skipped = schedule.rounds() - r;
                log::info!(
                    "skipping {skipped} refinement round(s): {cost:.3}s needed, {:.3}s left",
                    budget - elapsed
                );
                break;
            }
        }
        let round_start = Instant::now();
        let outcomes = par::map_mut(&mut alive, exec, |(_, state, done)| {
            let sched = Schedule {
                start_epoch: *done,
                horizon,
            };
            let o = trainer.train(state, epochs, sched);
            *done += epochs;
            o
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let round_secs = match cfg.clock {
            Clock::Wall => round_start.elapsed().as_secs_f64(),
            Clock::Simulated => outcomes.iter().map(|o| o.seconds).sum(),
        };
        elapsed += round_secs;
        total_epochs += alive.len() * epochs;
        unit_cost = Some(round_secs * parallel / (weight * epochs as f64));
        let mut board: Vec<(RoundEntry, usize)> = alive
            .iter()
            .zip(&outcomes)
            .enumerate()
            .map(|(i, ((a, _, done), o))| {
                (
                    RoundEntry {
                        arch: a.clone(),
                        val_auc: o.val_auc,
                        cumulative_epochs: *done,
                        loss_decrease: o.loss_decrease,
                        diverged: o.diverged,
                    },
                    i,
                )
            })
            .collect();
        board.sort_by(|x, y| entry_order(&x.0, &y.0));
        let keep = if r + 1 == schedule.rounds() {
            1
        } else {
            alive.len().div_ceil(cfg.eta)
        };
        // Survivors keep their board order so the leader stays first.
        let mut slots: Vec<Option<(ArchEncoding, T::State, usize)>> = alive.into_iter().map(Some).collect();
        alive = board
            .iter()
            .take(keep)
            .map(|(_, i)| slots[*i].take().expect("each survivor taken once"))
            .collect();
        rounds.push(RoundReport {
            round: r,
            epochs_each: epochs,
            leaderboard: board.into_iter().map(|(e, _)| e).collect(),
            seconds: round_secs,
        });
    }

    let winner_val_auc = rounds.last().map(|r| r.leaderboard[0].val_auc);
    Ok(RefineResult {
        winner: alive[0].0.clone(),
        winner_val_auc,
        rounds,
        total_epochs,
        schedule,
        skipped_rounds: skipped,
        wall_time_s: match cfg.clock {
            Clock::Wall => start.elapsed().as_secs_f64(),
            Clock::Simulated => elapsed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fake trainer: AUC grows with cumulative epochs at a per-arch rate.
    struct Linear;

    impl CandidateTrainer for Linear {
        type State = (f64, usize);

        fn init(&self, enc: &ArchEncoding) -> Result<(f64, usize)> {
            Ok((enc.sizes()[0] as f64 / 100.0, 0))
        }

        fn train(&self, s: &mut (f64, usize), epochs: usize, _: Schedule) -> Result<RoundOutcome> {
            s.1 += epochs;
            Ok(RoundOutcome {
                val_auc: (0.5 + s.0 * s.1 as f64 / 100.0).min(1.0),
                loss_decrease: 0.0,
                seconds: epochs as f64,
                diverged: false,
            })
        }
    }

    fn cands(n: usize) -> Vec<ArchEncoding> {
        (1..=n).map(|i| ArchEncoding::new(vec![i])).collect()
    }

    #[test]
    fn k8_schedule() {
        let s = HalvingSchedule::new(8, 2, 2).unwrap();
        let rounds: Vec<(usize, usize)> = (0..s.rounds()).map(|r| (s.survivors(r), s.epochs(r))).collect();
        assert_eq!(rounds, [(8, 2), (4, 4), (2, 8)]);
        assert_eq!(s.total_epochs(), 48);
        assert_eq!(s.planned_epochs(), 48);
        assert_eq!(s.horizon(), 16);
    }

    #[test]
    fn param_cost_counts_trainable_parameters() {
        for k in ["4", "8-16-32", "32-4"] {
            let enc: ArchEncoding = k.parse().unwrap();
            let m = MlpModel::build(enc.sizes(), 7, Init::he(0)).unwrap();
            assert_eq!(param_cost(&enc, 7), m.param_count().total() as f64);
        }
    }

    #[test]
    fn floor_logs() {
        assert_eq!(floor_log(1, 2), 0);
        assert_eq!(floor_log(7, 2), 2);
        assert_eq!(floor_log(8, 2), 3);
        assert_eq!(floor_log(26, 3), 2);
        assert_eq!(floor_log(27, 3), 3);
        assert_eq!(floor_log(usize::MAX, 2), 63);
    }

    #[test]
    fn non_power_of_eta_stays_within_factor() {
        for k in 2..100 {
            let s = HalvingSchedule::new(k, 2, 2).unwrap();
            assert!(s.total_epochs() >= s.planned_epochs());
            assert!(s.total_epochs() < 2 * s.planned_epochs());
        }
    }

    #[test]
    fn single_candidate_trains_u_epochs() {
        let r = run_refinement(&cands(1), &Linear, &RefineConfig::default()).unwrap();
        assert_eq!(r.total_epochs, 2);
        assert_eq!(r.winner, cands(1)[0]);
        assert_eq!(r.rounds.len(), 1);
    }

    #[test]
    fn fastest_learner_wins_and_survives_every_round() {
        let cfg = RefineConfig {
            workers: 3,
            ..RefineConfig::default()
        };
        let r = run_refinement(&cands(8), &Linear, &cfg).unwrap();
        assert_eq!(r.winner.key(), "8");
        assert_eq!(r.total_epochs, 48);
        for round in &r.rounds {
            assert!(round.leaderboard.iter().any(|e| e.arch == r.winner));
        }
        let sizes: Vec<usize> = r.rounds.iter().map(|x| x.leaderboard.len()).collect();
        assert_eq!(sizes, [8, 4, 2]);
    }

    #[test]
    fn budget_skips_rounds() {
        let cfg = RefineConfig {
            budget: Some(20.0),
            t2_estimate: Some(1.0),
            clock: Clock::Simulated,
            ..RefineConfig::default()
        };
        // round 0 costs 16, round 1 another 16
        let r = run_refinement(&cands(8), &Linear, &cfg).unwrap();
        assert_eq!(r.rounds.len(), 1);
        assert_eq!(r.skipped_rounds, 2);
        assert_eq!(r.winner.key(), "8");
        let cfg = RefineConfig {
            budget: Some(5.0),
            ..cfg
        };
        let r = run_refinement(&cands(8), &Linear, &cfg).unwrap();
        assert!(r.rounds.is_empty());
        assert_eq!(r.winner.key(), "1");
        assert_eq!(r.winner_val_auc, None);
    }

    #[test]
    fn diverged_ranks_last_and_ties_use_loss_then_key() {
        let mk = |k: &str, auc: f64, dec: f64, div: bool| RoundEntry {
            arch: k.parse().unwrap(),
            val_auc: auc,
            cumulative_epochs: 2,
            loss_decrease: dec,
            diverged: div,
        };
        let mut v = [
            mk("4", 0.9, 0.1, true),
            mk("8", 0.7, 0.1, false),
            mk("16", 0.7, 0.2, false),
            mk("2", 0.7, 0.1, false),
        ];
        v.sort_by(entry_order);
        let keys: Vec<String> = v.iter().map(|e| e.arch.key()).collect();
        assert_eq!(keys, ["16", "2", "8", "4"]);
    }
}
