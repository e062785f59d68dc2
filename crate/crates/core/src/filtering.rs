//! Proxy-guided regularized evolution: explores `M` distinct architectures
//! by tournament selection and single-position mutation over an aging
//! population, and keeps the `K` best proxy scores.

use std::cmp::Ordering;
use std::collections::{HashSet, VecDeque};
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proxies::{ProxyEvaluator, ProxyScore};
use crate::rng::{self, Rng};
use crate::space::{ArchEncoding, MutationKind, SearchSpaceSpec};

/// Anything that scores an architecture at initialization.
pub trait Scorer: Sync {
    fn score(&self, enc: &ArchEncoding) -> Result<ProxyScore>;
}

impl Scorer for ProxyEvaluator {
    fn score(&self, enc: &ArchEncoding) -> Result<ProxyScore> {
        ProxyEvaluator::score(self, enc)
    }
}

impl<F> Scorer for F
where
    F: Fn(&ArchEncoding) -> Result<ProxyScore> + Sync,
{
    fn score(&self, enc: &ArchEncoding) -> Result<ProxyScore> {
        self(enc)
    }
}

/// An evaluated architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredArch {
    pub arch: ArchEncoding,
    /// Ranking value: the proxy score, or −∞ when degenerate.
    pub score: f64,
    pub degenerate: bool,
}

impl ScoredArch {
    fn from_score(arch: ArchEncoding, s: &ProxyScore) -> Self {
        Self {
            arch,
            score: s.rank_key(),
            degenerate: s.degenerate,
        }
    }
}

/// Higher score first; equal scores put the smaller encoding first.
pub fn rank_order(a: &ScoredArch, b: &ScoredArch) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.arch.cmp(&b.arch))
}

/// Fixed-capacity population where insertion order is age.
#[derive(Debug, Clone)]
pub struct Population {
    capacity: usize,
    members: VecDeque<ScoredArch>,
}

impl Population {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            members: VecDeque::with_capacity(capacity),
        }
    }

    /// Inserts a member, evicting the oldest when full.
    pub fn insert(&mut self, s: ScoredArch) -> Option<ScoredArch> {
        let evicted = if self.members.len() == self.capacity {
            self.members.pop_front()
        } else {
            None
        };
        self.members.push_back(s);
        evicted
    }

    pub fn is_full(&self) -> bool {
        self.members.len() >= self.capacity
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Oldest first.
    pub fn members(&self) -> impl Iterator<Item = &ScoredArch> {
        self.members.iter()
    }

    /// Best of `sample_size` uniform draws (with replacement).
    pub fn tournament(&self, sample_size: usize, r: &mut Rng) -> &ScoredArch {
        let mut best = &self.members[r.random_range(0..self.members.len())];
        for _ in 1..sample_size {
            let c = &self.members[r.random_range(0..self.members.len())];
            if rank_order(c, best) == Ordering::Less {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Evaluation budget `M`.
    pub m: usize,
    /// Number of architectures kept, `K`.
    pub k: usize,
    pub pool_size: usize,
    pub sample_size: usize,
    pub workers: usize,
    pub seed: u64,
    pub mutation: MutationKind,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            m: 100,
            k: 10,
            pool_size: 10,
            sample_size: 3,
            workers: 1,
            seed: 0,
            mutation: MutationKind::Uniform,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidParameter("M must be at least 1".into()));
        }
        if self.k > self.m {
            return Err(Error::InvalidParameter(format!("K={} exceeds M={}", self.k, self.m)));
        }
        if self.sample_size < 2 || self.pool_size < self.sample_size {
            return Err(Error::InvalidParameter(format!(
                "need pool size ≥ sample size ≥ 2, got N={} and sample size {}",
                self.pool_size, self.sample_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    /// Best `min(K, explored)` architectures, best first.
    pub top_k: Vec<ScoredArch>,
    pub explored: usize,
    pub wall_time_s: f64,
    /// Best score seen after each evaluation.
    pub score_history: Vec<f64>,
    /// Set when a deadline stopped the search before `M` evaluations.
    pub stopped_early: bool,
    /// Every evaluation in completion order.
    #[serde(skip)]
    pub evaluations: Vec<ScoredArch>,
}

impl FilterResult {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("evaluation,best_score\n");
        for (i, v) in self.score_history.iter().enumerate() {
            s.push_str(&format!("{},{v}\n", i + 1));
        }
        s
    }
}

/// Proposes unseen architectures: random until the population is full,
/// then mutated tournament winners.
struct Proposer<'a> {
    space: &'a SearchSpaceSpec,
    cfg: &'a FilterConfig,
    rng: Rng,
    seen: HashSet<ArchEncoding>,
}

const REDRAWS: usize = 16;

impl Proposer<'_> {
    fn propose(&mut self, pop: &Population) -> Result<ArchEncoding> {
        if pop.is_full() {
            let parent = pop.tournament(self.cfg.sample_size, &mut self.rng).arch.clone();
            for _ in 0..REDRAWS {
                let child = self.space.mutate_with(&parent, self.cfg.mutation, &mut self.rng)?;
                if self.seen.insert(child.clone()) {
                    return Ok(child);
                }
            }
        }
        for _ in 0..REDRAWS {
            let a = self.space.sample_with(&mut self.rng);
            if self.seen.insert(a.clone()) {
                return Ok(a);
            }
        }
        // Dense coverage: walk the enumeration from a random offset. At most
        // |seen| + 1 steps are needed to find a free slot.
        let size = self.space.size();
        let start = self.rng.random_range(0..size);
        let steps = (self.seen.len() as u128 + 1).min(size);
        for j in 0..steps {
            let a = self.space.nth((start + j) % size);
            if self.seen.insert(a.clone()) {
                return Ok(a);
            }
        }
        Err(Error::InvalidParameter("search space exhausted".into()))
    }
}

struct Tracker {
    pop: Population,
    evaluations: Vec<ScoredArch>,
    history: Vec<f64>,
    best: f64,
}

impl Tracker {
    fn record(&mut self, s: ScoredArch) {
        self.best = self.best.max(s.score);
        self.history.push(self.best);
        self.pop.insert(s.clone());
        self.evaluations.push(s);
    }
}

/// Runs the evolutionary filtering phase. Evaluation stops after `cfg.m`
/// distinct architectures (capped at the space size), or once `deadline`
/// passes with at least one evaluation done.
pub fn run_filtering(
    space: &SearchSpaceSpec,
    scorer: &dyn Scorer,
    cfg: &FilterConfig,
    deadline: Option<Instant>,
) -> Result<FilterResult> {
    space.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let mut m = cfg.m;
    if m as u128 > space.size() {
        log::warn!("M={m} exceeds the space size {}; capping", space.size());
        m = space.size() as usize;
    }
    let mut proposer = Proposer {
        space,
        cfg,
        rng: rng::seeded(rng::derive_seed(cfg.seed, "filtering")),
        seen: HashSet::with_capacity(m),
    };
    let mut t = Tracker {
        pop: Population::new(cfg.pool_size),
        evaluations: Vec::with_capacity(m),
        history: Vec::with_capacity(m),
        best: f64::NEG_INFINITY,
    };
    let expired = |done: usize| done > 0 && deadline.is_some_and(|d| Instant::now() >= d);

    if cfg.workers <= 1 {
        while t.evaluations.len() < m && !expired(t.evaluations.len()) {
            let a = proposer.propose(&t.pop)?;
            let s = scorer.score(&a)?;
            t.record(ScoredArch::from_score(a, &s));
        }
    } else {
        queued(&mut proposer, &mut t, scorer, m, cfg.workers, &expired)?;
    }

    let stopped_early = t.evaluations.len() < m;
    let mut ranked = t.evaluations.clone();
    ranked.sort_by(rank_order);
    ranked.truncate(cfg.k.min(ranked.len()));
    Ok(FilterResult {
        top_k: ranked,
        explored: t.evaluations.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
        score_history: t.history,
        stopped_early,
        evaluations: t.evaluations,
    })
}

/// Scoring on a worker pool fed through a bounded queue of capacity
/// `2·workers`; results merge into the population as they complete.
#[cfg(feature = "parallel")]
fn queued(
    proposer: &mut Proposer<'_>,
    t: &mut Tracker,
    scorer: &dyn Scorer,
    m: usize,
    workers: usize,
    expired: &dyn Fn(usize) -> bool,
) -> Result<()> {
    use crossbeam_channel::{bounded, unbounded};

    let capacity = 2 * workers;
    let (job_tx, job_rx) = bounded::<ArchEncoding>(capacity);
    let (res_tx, res_rx) = unbounded::<(ArchEncoding, Result<ProxyScore>)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let (job_rx, res_tx) = (job_rx.clone(), res_tx.clone());
            scope.spawn(move || {
                for a in job_rx {
                    let s = scorer.score(&a);
                    if res_tx.send((a, s)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(res_tx);
        let mut proposed = 0;
        let mut in_flight = 0;
        let outcome = loop {
            let stop = expired(t.evaluations.len());
            while !stop && proposed < m && in_flight < capacity {
                let a = match proposer.propose(&t.pop) {
                    Ok(a) => a,
                    Err(e) => {
                        drop(job_tx);
                        return Err(e);
                    }
                };
                job_tx.send(a).expect("workers outlive the queue");
                proposed += 1;
                in_flight += 1;
            }
            if in_flight == 0 {
                break Ok(());
            }
            let (a, s) = res_rx.recv().expect("a job is in flight");
            in_flight -= 1;
            match s {
                Ok(s) => t.record(ScoredArch::from_score(a, &s)),
                Err(e) => break Err(e),
            }
        };
        drop(job_tx);
        outcome
    })
}

#[cfg(not(feature = "parallel"))]
fn queued(
    proposer: &mut Proposer<'_>,
    t: &mut Tracker,
    scorer: &dyn Scorer,
    m: usize,
    _workers: usize,
    expired: &dyn Fn(usize) -> bool,
) -> Result<()> {
    while t.evaluations.len() < m && !expired(t.evaluations.len()) {
        let a = proposer.propose(&t.pop)?;
        let s = scorer.score(&a)?;
        t.record(ScoredArch::from_score(a, &s));
    }
    Ok(())
}
