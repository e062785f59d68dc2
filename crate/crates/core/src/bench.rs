//! Exhaustive mini benchmark: full per-epoch training statistics for every
//! architecture in a small search space, persisted as JSON lines.
//!
//! Line 1 is the header
//! `{"space":{"L":..,"H":[..]},"dataset_sha256":..,"epochs":..,"B":..,"lr":..,"seed":..,"created":..}`;
//! every further line is one [`BenchRecord`]. Records are written in
//! lexicographic architecture order, so an interrupted build leaves a prefix
//! that a restart completes into the same file.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::nn::{train_epochs_with, Init, MlpModel, Schedule, TrainConfig};
use crate::par::{self, Execution};
use crate::proxies::{ProxyEvaluator, ProxyKind, ScoreConfig};
use crate::rng;
use crate::space::{ArchEncoding, SearchSpaceSpec};
use crate::stats;

/// Training fraction of the split fixed by the header seed.
pub const BENCH_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchHeader {
    pub space: SearchSpaceSpec,
    pub dataset_sha256: String,
    pub epochs: usize,
    #[serde(rename = "B")]
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Unix seconds.
    pub created: u64,
}

impl BenchHeader {
    fn same_build(&self, other: &BenchHeader) -> bool {
        self.space == other.space
            && self.dataset_sha256 == other.dataset_sha256
            && self.epochs == other.epochs
            && self.batch_size == other.batch_size
            && self.lr == other.lr
            && self.seed == other.seed
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: BENCH_TRAIN_FRACTION,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub arch: ArchEncoding,
    pub params: usize,
    pub train_auc: Vec<f64>,
    pub val_auc: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub epoch_time_s: Vec<f64>,
    pub seed: u64,
    pub diverged: bool,
}

impl BenchRecord {
    pub fn best_val_auc(&self) -> f64 {
        self.val_auc.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn best_epoch(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.val_auc.iter().enumerate() {
            if v > self.val_auc[best] {
                best = i;
            }
        }
        best
    }
}

/// Which epoch a query reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochSel {
    /// 0-based epoch index.
    Index(usize),
    /// Epoch with the highest validation AUC.
    Best,
}

impl std::str::FromStr for EpochSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "best" {
            return Ok(EpochSel::Best);
        }
        s.parse()
            .map(EpochSel::Index)
            .map_err(|_| Error::InvalidParameter(format!("epoch must be an index or \"best\", got {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchQuery {
    pub arch: ArchEncoding,
    pub params: usize,
    pub epoch: usize,
    pub train_auc: f64,
    pub val_auc: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub epoch_time_s: f64,
    /// Training time up to and including `epoch`.
    pub cumulative_time_s: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct BenchFile {
    pub header: BenchHeader,
    records: Vec<BenchRecord>,
    index: HashMap<ArchEncoding, usize>,
}

impl BenchFile {
    pub fn new(header: BenchHeader, records: Vec<BenchRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !header.space.contains(&r.arch) {
                return Err(Error::BenchFormat(format!(
                    "record {} outside header space {}",
                    r.arch, header.space
                )));
            }
            let n = header.epochs;
            if [&r.train_auc, &r.val_auc, &r.train_loss, &r.val_loss, &r.epoch_time_s]
                .iter()
                .any(|a| a.len() != n)
            {
                return Err(Error::BenchFormat(format!("record {} arrays are not {n} long", r.arch)));
            }
            if index.insert(r.arch.clone(), i).is_some() {
                return Err(Error::BenchFormat(format!("duplicate record {}", r.arch)));
            }
        }
        Ok(Self {
            header,
            records,
            index,
        })
    }

    pub fn records(&self) -> &[BenchRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every architecture of the header space is present.
    pub fn is_complete(&self) -> bool {
        self.records.len() as u128 == self.header.space.size()
    }

    pub fn record(&self, enc: &ArchEncoding) -> Option<&BenchRecord> {
        self.index.get(enc).map(|&i| &self.records[i])
    }

    pub fn get(&self, enc: &ArchEncoding) -> Result<&BenchRecord> {
        self.record(enc).ok_or_else(|| Error::UnknownArch {
            key: enc.key(),
            nearest: self.nearest_keys(enc, 3),
        })
    }

    fn nearest_keys(&self, enc: &ArchEncoding, k: usize) -> Vec<String> {
        let dist = |r: &BenchRecord| {
            let log_gap: f64 = r
                .arch
                .sizes()
                .iter()
                .zip(enc.sizes())
                .map(|(&a, &b)| ((a as f64).log2() - (b as f64).log2()).abs())
                .sum();
            (r.arch.hamming(enc), log_gap)
        };
        let mut recs: Vec<&BenchRecord> = self.records.iter().collect();
        recs.sort_by(|a, b| {
            let (da, db) = (dist(a), dist(b));
            da.0.cmp(&db.0).then(da.1.total_cmp(&db.1)).then(a.arch.cmp(&b.arch))
        });
        recs.into_iter().take(k).map(|r| r.arch.key()).collect()
    }

    pub fn query(&self, enc: &ArchEncoding, epoch: EpochSel) -> Result<BenchQuery> {
        let r = self.get(enc)?;
        let e = match epoch {
            EpochSel::Best => r.best_epoch(),
            EpochSel::Index(i) if i < r.val_auc.len() => i,
            EpochSel::Index(i) => {
                return Err(Error::EpochOutOfRange {
                    index: i,
                    len: r.val_auc.len(),
                })
            }
        };
        Ok(BenchQuery {
            arch: r.arch.clone(),
            params: r.params,
            epoch: e,
            train_auc: r.train_auc[e],
            val_auc: r.val_auc[e],
            train_loss: r.train_loss[e],
            val_loss: r.val_loss[e],
            epoch_time_s: r.epoch_time_s[e],
            cumulative_time_s: r.epoch_time_s[..=e].iter().sum(),
            diverged: r.diverged,
        })
    }

    /// Architecture with the highest best-epoch validation AUC (ties go to
    /// the lexicographically smaller key).
    pub fn best(&self) -> Option<&BenchRecord> {
        self.records.iter().fold(None, |acc: Option<&BenchRecord>, r| match acc {
            Some(a) if a.best_val_auc() >= r.best_val_auc() => Some(a),
            _ => Some(r),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}", serde_json::to_string(&self.header)?).map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Strict load: every line must parse.
    pub fn load(path: &Path) -> Result<Self> {
        let (header, records, good_len, total_len) = read_lines(path)?;
        if good_len != total_len {
            return Err(Error::BenchFormat(format!(
                "{}: unparseable content after byte {good_len}",
                path.display()
            )));
        }
        Self::new(header, records)
    }
}

/// Reads a bench file, stopping at the first unparseable line. Returns the
/// header, parsed records, the byte length of the parsed prefix and the
/// file length.
fn read_lines(path: &Path) -> Result<(BenchHeader, Vec<BenchRecord>, u64, u64)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let total = f.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut reader = BufReader::new(f);
    let mut line = String::new();
    let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if n == 0 || !line.ends_with('\n') {
        return Err(Error::BenchFormat(format!("{}: missing header line", path.display())));
    }
    let header: BenchHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::BenchFormat(format!("bad header: {e}")))?;
    let mut good = n as u64;
    let mut records = Vec::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<BenchRecord>(line.trim_end()) {
            Ok(r) => records.push(r),
            Err(_) => break,
        }
        good += n as u64;
    }
    Ok((header, records, good, total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchBuildConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for BenchBuildConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 0.1,
            seed: 0,
            workers: 1,
        }
    }
}

/// Per-architecture training seed: `derive_seed(global, key)`.
pub fn arch_seed(global: u64, enc: &ArchEncoding) -> u64 {
    rng::derive_seed(global, &enc.key())
}

/// Trains one architecture for the bench. A non-finite loss stops training
/// and marks the record diverged; the remaining epochs are padded with
/// AUC 0.5, the last finite losses and zero time.
pub fn train_record(
    enc: &ArchEncoding,
    train: &Dataset,
    val: &Dataset,
    cfg: &BenchBuildConfig,
) -> Result<BenchRecord> {
    let seed = arch_seed(cfg.seed, enc);
    let mut m = MlpModel::build(enc.sizes(), train.d(), Init::he(seed))?;
    let tc = TrainConfig {
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed,
    };
    let mut rec = BenchRecord {
        arch: enc.clone(),
        params: m.param_count().total(),
        train_auc: Vec::with_capacity(cfg.epochs),
        val_auc: Vec::with_capacity(cfg.epochs),
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        epoch_time_s: Vec::with_capacity(cfg.epochs),
        seed,
        diverged: false,
    };
    for epoch in 0..cfg.epochs {
        let sched = Schedule {
            start_epoch: epoch,
            horizon: cfg.epochs,
        };
        match train_epochs_with(&mut m, train, val, 1, tc, sched) {
            Ok(r) => {
                let r = r[0];
                rec.train_auc.push(r.train_auc);
                rec.val_auc.push(r.val_auc);
                rec.train_loss.push(r.train_loss);
                rec.val_loss.push(r.val_loss);
                rec.epoch_time_s.push(r.wall_time);
            }
            Err(Error::NonFinite(msg)) => {
                log::warn!("{enc} diverged: {msg}");
                rec.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let ln2 = std::f64::consts::LN_2;
    let (tl, vl) = (
        rec.train_loss.last().copied().unwrap_or(ln2),
        rec.val_loss.last().copied().unwrap_or(ln2),
    );
    while rec.val_auc.len() < cfg.epochs {
        rec.train_auc.push(0.5);
        rec.val_auc.push(0.5);
        rec.train_loss.push(tl);
        rec.val_loss.push(vl);
        rec.epoch_time_s.push(0.0);
    }
    Ok(rec)
}

/// Builds (or resumes) the bench at `path` over every architecture of
/// `space`. The dataset is split with the header seed; per-architecture
/// seeds come from [`arch_seed`], so the result does not depend on the
/// worker count.
pub fn build_bench(
    space: &SearchSpaceSpec,
    dataset: &Dataset,
    cfg: &BenchBuildConfig,
    path: &Path,
) -> Result<BenchFile> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidParameter("epochs must be at least 1".into()));
    }
    let all = space.enumerate()?;
    let mut header = BenchHeader {
        space: space.clone(),
        dataset_sha256: dataset.fingerprint(),
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        seed: cfg.seed,
        created: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let (train, val) = split(dataset, header.split_spec())?;

    let mut records = Vec::new();
    if path.exists() {
        let (existing, recs, good, total) = read_lines(path)?;
        if !existing.same_build(&header) {
            return Err(Error::BenchFormat(format!(
                "{} was built with different settings; refusing to resume",
                path.display()
            )));
        }
        if good != total {
            log::warn!("truncating partial trailing line of {}", path.display());
            let f = OpenOptions::new()
                .write(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.set_len(good).map_err(|e| Error::io(path, e))?;
        }
        header = existing;
        records = recs;
        log::info!("resuming {}: {} of {} records present", path.display(), records.len(), all.len());
    } else {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(f, "{}", serde_json::to_string(&header)?).map_err(|e| Error::io(path, e))?;
    }

    let done: HashSet<ArchEncoding> = records.iter().map(|r| r.arch.clone()).collect();
    let pending: Vec<ArchEncoding> = all.into_iter().filter(|a| !done.contains(a)).collect();
    let exec = Execution::from_workers(cfg.workers);
    let chunk = (2 * exec.workers()).max(1);
    let mut out = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for group in pending.chunks(chunk) {
        let trained = par::map(group, exec, |enc| train_record(enc, &train, &val, cfg));
        for rec in trained {
            let rec = rec?;
            writeln!(out, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(path, e))?;
            records.push(rec);
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        log::info!("bench: {} records written", records.len());
    }
    BenchFile::new(header, records)
}

/// Distribution summaries of a bench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub records: usize,
    /// ECDF of each record's best-epoch validation AUC.
    pub val_auc_ecdf: Vec<(f64, f64)>,
    /// ECDF of each record's training AUC at the same epoch.
    pub train_auc_ecdf: Vec<(f64, f64)>,
    /// `(param_count, best val AUC)` per record.
    pub params_vs_val_auc: Vec<(usize, f64)>,
    /// Spearman correlation of parameter count and best val AUC; `None`
    /// when either side is constant.
    pub param_srcc: Option<f64>,
}

impl StatsReport {
    pub fn ecdf_csv(&self) -> String {
        let mut s = String::from("split,auc,cumulative_fraction\n");
        for (name, e) in [("train", &self.train_auc_ecdf), ("val", &self.val_auc_ecdf)] {
            for (v, f) in e {
                s.push_str(&format!("{name},{v},{f}\n"));
            }
        }
        s
    }

    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("params,val_auc\n");
        for (p, v) in &self.params_vs_val_auc {
            s.push_str(&format!("{p},{v}\n"));
        }
        s
    }
}

pub fn stats_report(bench: &BenchFile) -> Result<StatsReport> {
    if bench.is_empty() {
        return Err(Error::InvalidParameter("empty bench".into()));
    }
    let best: Vec<usize> = bench.records().iter().map(BenchRecord::best_epoch).collect();
    let val: Vec<f64> = bench.records().iter().zip(&best).map(|(r, &e)| r.val_auc[e]).collect();
    let train: Vec<f64> = bench.records().iter().zip(&best).map(|(r, &e)| r.train_auc[e]).collect();
    let params: Vec<usize> = bench.records().iter().map(|r| r.params).collect();
    let pf: Vec<f64> = params.iter().map(|&p| p as f64).collect();
    let param_srcc = match stats::srcc(&pf, &val) {
        Ok(v) => Some(v),
        Err(Error::ConstantInput) | Err(Error::InvalidParameter(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(StatsReport {
        records: bench.len(),
        val_auc_ecdf: stats::ecdf(&val),
        train_auc_ecdf: stats::ecdf(&train),
        params_vs_val_auc: params.into_iter().zip(val).collect(),
        param_srcc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrccRow {
    pub kind: ProxyKind,
    pub srcc: Option<f64>,
    pub mean_score_time_s: f64,
    pub scored: usize,
    pub degenerate: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrccReport {
    pub sampled: usize,
    pub rows: Vec<SrccRow>,
}

impl SrccReport {
    pub fn get(&self, kind: ProxyKind) -> Option<&SrccRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }
}

/// Records to score: all, or `sample` of them chosen with a seeded shuffle
/// (returned in bench order).
pub fn sample_records(bench: &BenchFile, sample: Option<usize>, seed: u64) -> Result<Vec<&BenchRecord>> {
    let n = bench.len();
    match sample {
        None => Ok(bench.records().iter().collect()),
        Some(k) if k > n => Err(Error::InvalidParameter(format!("sample {k} exceeds bench size {n}"))),
        Some(k) => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng::seeded(seed));
            idx.truncate(k);
            idx.sort_unstable();
            Ok(idx.into_iter().map(|i| &bench.records()[i]).collect())
        }
    }
}

/// Correlates proxy scores at initialization with each record's best
/// validation AUC. `dataset` must be the one the bench was built on; data
/// batches come from its training split. `cfg.seed` drives both the
/// per-architecture initialization and the batch.
pub fn proxy_srcc_report(
    bench: &BenchFile,
    dataset: &Dataset,
    kinds: &[ProxyKind],
    cfg: &ScoreConfig,
    sample: Option<usize>,
    exec: Execution,
) -> Result<SrccReport> {
    if dataset.fingerprint() != bench.header.dataset_sha256 {
        log::warn!("dataset fingerprint differs from the bench header");
    }
    let (train, _) = split(dataset, bench.header.split_spec())?;
    let recs = sample_records(bench, sample, cfg.seed)?;
    let target: Vec<f64> = recs.iter().map(|r| r.best_val_auc()).collect();
    let encs: Vec<ArchEncoding> = recs.iter().map(|r| r.arch.clone()).collect();
    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let row = (|| -> Result<SrccRow> {
            let ev = ProxyEvaluator::new(kind, *cfg, train.d(), Some(&train))?;
            let scores = par::map(&encs, exec, |e| ev.score(e))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let keys: Vec<f64> = scores.iter().map(|s| s.rank_key()).collect();
            let srcc = match stats::srcc(&keys, &target) {
                Ok(v) => Some(v),
                Err(Error::ConstantInput) => None,
                Err(e) => return Err(e),
            };
            Ok(SrccRow {
                kind,
                srcc,
                mean_score_time_s: stats::mean(&scores.iter().map(|s| s.wall_time_seconds).collect::<Vec<_>>())
                    .unwrap_or(0.0),
                scored: scores.len(),
                degenerate: scores.iter().filter(|s| s.degenerate).count(),
                error: None,
            })
        })();
        rows.push(row.unwrap_or_else(|e| SrccRow {
            kind,
            srcc: None,
            mean_score_time_s: 0.0,
            scored: 0,
            degenerate: 0,
            error: Some(e.to_string()),
        }));
    }
    Ok(SrccReport {
        sampled: recs.len(),
        rows,
    })
}
