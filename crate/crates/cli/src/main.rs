//! `atlas-nas`: budget-aware architecture search for tabular MLPs.
//!
//! Every command prints one JSON report on stdout; progress goes to stderr.
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 budget overrun.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atlas_core::bench::{
    build_bench, proxy_srcc_report, stats_report, BenchBuildConfig, BenchFile, EpochSel,
};
use atlas_core::coordinator::{
    plan, profile, run_atlas, run_atlas_simulated, AtlasConfig, AtlasReport, PlanConfig,
};
use atlas_core::data::{load_csv, make_synthetic, parse_synthetic, split, Dataset, SplitSpec};
use atlas_core::filtering::{run_filtering, FilterConfig};
use atlas_core::nn::{BnMode, Init, InitScheme, MlpModel, TrainConfig};
use atlas_core::par::{default_workers, Execution};
use atlas_core::proxies::{
    saliency_identity_check, DataMode, ProxyEvaluator, ProxyKind, Recalibration, ScoreConfig,
};
use atlas_core::refinement::{run_refinement, Clock, RealTrainer, RefineConfig, ReplayTrainer};
use atlas_core::space::{ArchEncoding, MutationKind, SearchSpaceSpec};
use atlas_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "atlas-nas", version, about = "Anytime neural architecture search for tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and inspect exhaustive mini benchmarks
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Score single architectures
    #[command(subcommand)]
    Proxy(ProxyCmd),
    /// Run search phases
    #[command(subcommand)]
    Search(SearchCmd),
    /// Measure proxy and epoch cost on a dataset
    Profile(ProfileArgs),
}

#[derive(Subcommand, Debug)]
enum BenchCmd {
    /// Train every architecture of a space and write a JSON-lines bench
    Build(BenchBuildArgs),
    /// Look up one architecture
    Query(BenchQueryArgs),
    /// ECDF and parameter-count summaries
    Stats(BenchStatsArgs),
    /// Rank correlation of proxies against the bench
    Srcc(BenchSrccArgs),
}

#[derive(Subcommand, Debug)]
enum ProxyCmd {
    /// Score one architecture at initialization
    Score(ProxyScoreArgs),
    /// Check the neuron/synaptic saliency identities on one architecture
    IdentityCheck(IdentityArgs),
}

#[derive(Subcommand, Debug)]
enum SearchCmd {
    /// Proxy-guided regularized evolution
    Filter(FilterArgs),
    /// Successive halving over given candidates
    Refine(RefineArgs),
    /// Budgeted filtering + refinement
    Atlas(AtlasArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Synthetic dataset, e.g. `n=2000,d=8,noise=0.1,seed=7`
    #[arg(long, conflicts_with = "data")]
    synthetic: Option<String>,
    /// CSV file with a header row
    #[arg(long)]
    data: Option<PathBuf>,
    /// Label column of the CSV
    #[arg(long, default_value = "label")]
    label_col: String,
    /// Comma-separated categorical columns of the CSV
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
}

impl DataArgs {
    fn provided(&self) -> bool {
        self.synthetic.is_some() || self.data.is_some()
    }

    fn load(&self) -> atlas_core::Result<Dataset> {
        match (&self.synthetic, &self.data) {
            (Some(s), _) => make_synthetic(parse_synthetic(s)?),
            (None, Some(p)) => {
                let cats: BTreeSet<String> = self.categorical.iter().cloned().collect();
                load_csv(p, &self.label_col, &cats)
            }
            (None, None) => Err(Error::InvalidParameter(
                "a dataset is required: pass --synthetic or --data".into(),
            )),
        }
    }

    fn echo(&self) -> Value {
        json!({
            "synthetic": self.synthetic,
            "data": self.data,
            "label_col": self.label_col,
            "categorical": self.categorical,
        })
    }
}

#[derive(Args, Debug, Clone)]
struct ScoreArgs {
    /// Batch size for data-dependent proxies
    #[arg(long = "score-batch", default_value_t = 4)]
    score_batch: usize,
    #[arg(long, value_enum, default_value_t = DataModeArg::AllOnes)]
    data_mode: DataModeArg,
    #[arg(long, default_value = "both")]
    recalibration: String,
    #[arg(long, default_value = "he")]
    init: String,
    /// Keep signed weights for ExpressFlow
    #[arg(long)]
    no_positivity: bool,
    /// Use batch statistics instead of bypassing batch norm on real batches
    #[arg(long)]
    real_batch_bn_stats: bool,
    #[arg(long, default_value_t = 16)]
    segments: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum DataModeArg {
    AllOnes,
    RealBatch,
}

impl ScoreArgs {
    fn config(&self, seed: u64) -> atlas_core::Result<ScoreConfig> {
        let cfg = ScoreConfig {
            batch_size: self.score_batch,
            init: self.init.parse::<InitScheme>()?,
            positivity: !self.no_positivity,
            data_mode: match self.data_mode {
                DataModeArg::AllOnes => DataMode::AllOnes,
                DataModeArg::RealBatch => DataMode::RealBatch,
            },
            recalibration: self.recalibration.parse::<Recalibration>()?,
            segments: self.segments,
            seed,
            real_batch_bn: if self.real_batch_bn_stats {
                BnMode::BatchStats
            } else {
                BnMode::Bypass
            },
            ..ScoreConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct BenchBuildArgs {
    /// Search space, e.g. `4,8,16,32 x3`
    #[arg(long, default_value = "4,8,16,32 x3")]
    space: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// Output file (resumed if it exists)
    #[arg(long, default_value = "bench.jsonl")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchQueryArgs {
    #[arg(long)]
    bench: PathBuf,
    #[arg(long)]
    arch: String,
    /// Epoch index or `best`
    #[arg(long, default_value = "best")]
    epoch: String,
}

#[derive(Args, Debug)]
struct BenchStatsArgs {
    #[arg(long)]
    bench: PathBuf,
    /// Write the ECDF as CSV
    #[arg(long)]
    ecdf_csv: Option<PathBuf>,
    /// Write (params, val AUC) pairs as CSV
    #[arg(long)]
    scatter_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchSrccArgs {
    #[arg(long)]
    bench: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated proxy kinds, or `all`
    #[arg(long, default_value = "all")]
    kinds: String,
    #[command(flatten)]
    score: ScoreArgs,
    /// Score a random subset of this many records
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct ProxyScoreArgs {
    #[arg(long)]
    arch: String,
    #[arg(long, default_value = "expressflow")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    data: DataArgs,
    /// Input dimension when no dataset is given
    #[arg(long)]
    d: Option<usize>,
    #[command(flatten)]
    score: ScoreArgs,
}

#[derive(Args, Debug)]
struct IdentityArgs {
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 8)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long, default_value = "4,8,16,32 x3")]
    space: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "expressflow")]
    proxy: String,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    pool: usize,
    #[arg(long, default_value_t = 3)]
    sample_size: usize,
    /// Mutate to a neighbouring width instead of any other width
    #[arg(long)]
    adjacent_mutation: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    score: ScoreArgs,
    /// Write the best-so-far score history as CSV
    #[arg(long)]
    history_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RefineArgs {
    /// JSON list of encodings, or a `search filter` report
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, default_value_t = 2)]
    u: usize,
    #[arg(long, default_value_t = 2)]
    eta: usize,
    #[command(flatten)]
    data: DataArgs,
    /// Replay recorded curves from this bench instead of training
    #[arg(long)]
    simulate: Option<PathBuf>,
    #[arg(long = "batch-size", default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct AtlasArgs {
    /// Time budget, e.g. `60s`, `5m`
    #[arg(long, value_parser = parse_duration)]
    tmax: f64,
    #[arg(long, default_value = "4,8,16,32 x3")]
    space: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "expressflow")]
    proxy: String,
    #[arg(long, default_value_t = 30)]
    ratio: usize,
    #[arg(long, default_value_t = 2)]
    u: usize,
    #[arg(long, default_value_t = 2)]
    eta: usize,
    #[arg(long = "batch-size", default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 5)]
    probes: usize,
    #[command(flatten)]
    score: ScoreArgs,
    /// Run in simulated time against this bench
    #[arg(long, requires_all = ["t1", "t2"])]
    simulate: Option<PathBuf>,
    /// Simulated seconds per proxy evaluation
    #[arg(long)]
    t1: Option<f64>,
    /// Simulated seconds per training epoch
    #[arg(long)]
    t2: Option<f64>,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long, default_value = "4,8,16,32 x3")]
    space: String,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "expressflow")]
    proxy: String,
    #[arg(long, default_value_t = 5)]
    probes: usize,
    #[arg(long = "batch-size", default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    score: ScoreArgs,
    /// Also plan for this budget
    #[arg(long, value_parser = parse_duration)]
    tmax: Option<f64>,
}

/// Parses `<number><s|m|h>` into seconds; a bare number means seconds.
fn parse_duration(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let (num, scale) = match s.chars().last() {
        Some('s') => (&s[..s.len() - 1], 1.0),
        Some('m') => (&s[..s.len() - 1], 60.0),
        Some('h') => (&s[..s.len() - 1], 3600.0),
        _ => (s, 1.0),
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("bad duration {s:?}"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("duration must be positive, got {s:?}"));
    }
    Ok(v * scale)
}

/// Failure of a command, carrying its exit code.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(msg) => Failure::Usage(msg),
            e => Failure::Runtime(e),
        }
    }
}

type CmdResult = Result<Outcome, Failure>;

struct Outcome {
    config: Value,
    result: Value,
    over_budget: bool,
}

fn outcome<T: Serialize>(config: Value, result: &T) -> CmdResult {
    Ok(Outcome {
        config,
        result: serde_json::to_value(result).map_err(|e| Failure::Runtime(e.into()))?,
        over_budget: false,
    })
}

fn workers(w: Option<usize>) -> usize {
    w.unwrap_or_else(default_workers).max(1)
}

fn parse_space(s: &str) -> Result<SearchSpaceSpec, Failure> {
    Ok(s.parse::<SearchSpaceSpec>()?)
}

fn parse_arch(s: &str) -> Result<ArchEncoding, Failure> {
    Ok(s.parse::<ArchEncoding>()?)
}

fn train_val(data: &DataArgs, seed: u64) -> Result<(Dataset, Dataset), Failure> {
    let ds = data.load()?;
    Ok(split(&ds, SplitSpec { train_fraction: 0.8, seed })?)
}

fn bench_build(a: &BenchBuildArgs) -> CmdResult {
    let space = parse_space(&a.space)?;
    let ds = a.data.load()?;
    let cfg = BenchBuildConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        workers: workers(a.workers),
    };
    let bench = build_bench(&space, &ds, &cfg, &a.out)?;
    let best = bench.best().map(|r| json!({"arch": r.arch, "val_auc": r.best_val_auc()}));
    outcome(
        json!({"space": space, "data": a.data.echo(), "build": cfg, "out": a.out}),
        &json!({
            "path": a.out,
            "records": bench.len(),
            "complete": bench.is_complete(),
            "diverged": bench.records().iter().filter(|r| r.diverged).count(),
            "best": best,
        }),
    )
}

fn bench_query(a: &BenchQueryArgs) -> CmdResult {
    let bench = BenchFile::load(&a.bench)?;
    let q = bench.query(&parse_arch(&a.arch)?, a.epoch.parse::<EpochSel>()?)?;
    outcome(json!({"bench": a.bench, "arch": a.arch, "epoch": a.epoch}), &q)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| {
        Failure::Runtime(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn bench_stats(a: &BenchStatsArgs) -> CmdResult {
    let bench = BenchFile::load(&a.bench)?;
    let s = stats_report(&bench)?;
    if let Some(p) = &a.ecdf_csv {
        write_file(p, &s.ecdf_csv())?;
    }
    if let Some(p) = &a.scatter_csv {
        write_file(p, &s.scatter_csv())?;
    }
    let mut v = serde_json::to_value(&s).map_err(|e| Failure::Runtime(e.into()))?;
    v["note"] = json!("parameter count is expected to correlate only weakly with validation AUC");
    outcome(json!({"bench": a.bench, "ecdf_csv": a.ecdf_csv, "scatter_csv": a.scatter_csv}), &v)
}

fn parse_kinds(s: &str) -> Result<Vec<ProxyKind>, Failure> {
    if s == "all" {
        return Ok(ProxyKind::ALL.to_vec());
    }
    s.split(',')
        .map(|k| k.trim().parse::<ProxyKind>().map_err(Failure::from))
        .collect()
}

fn bench_srcc(a: &BenchSrccArgs) -> CmdResult {
    let bench = BenchFile::load(&a.bench)?;
    let ds = a.data.load()?;
    let kinds = parse_kinds(&a.kinds)?;
    let cfg = a.score.config(a.seed)?;
    let exec = Execution::from_workers(workers(a.workers));
    let report = proxy_srcc_report(&bench, &ds, &kinds, &cfg, a.sample, exec)?;
    outcome(
        json!({"bench": a.bench, "data": a.data.echo(), "kinds": kinds, "score": cfg, "sample": a.sample}),
        &report,
    )
}

fn proxy_score(a: &ProxyScoreArgs) -> CmdResult {
    let enc = parse_arch(&a.arch)?;
    let kind: ProxyKind = a.kind.parse()?;
    let cfg = a.score.config(a.seed)?;
    let ds = if a.data.provided() { Some(a.data.load()?) } else { None };
    let d = match (&ds, a.d) {
        (Some(ds), _) => ds.d(),
        (None, Some(d)) => d,
        (None, None) => return Err(Failure::Usage("pass a dataset or --d".into())),
    };
    let ev = ProxyEvaluator::new(kind, cfg, d, ds.as_ref())?;
    let s = ev.score(&enc)?;
    outcome(
        json!({"arch": a.arch, "kind": kind, "data": a.data.echo(), "d": d, "score": cfg}),
        &json!({
            "arch": enc,
            "kind": kind,
            "score": s.value,
            "degenerate": s.degenerate,
            "wall_time_s": s.wall_time_seconds,
        }),
    )
}

fn identity_check(a: &IdentityArgs) -> CmdResult {
    let enc = parse_arch(&a.arch)?;
    let m = MlpModel::build(enc.sizes(), a.d, Init::he(a.seed))?;
    let r = saliency_identity_check(&m)?;
    outcome(json!({"arch": a.arch, "d": a.d, "seed": a.seed}), &r)
}

fn search_filter(a: &FilterArgs) -> CmdResult {
    let space = parse_space(&a.space)?;
    let kind: ProxyKind = a.proxy.parse()?;
    let cfg = a.score.config(a.seed)?;
    let (train, _) = train_val(&a.data, a.seed)?;
    let ev = ProxyEvaluator::new(kind, cfg, train.d(), Some(&train))?;
    let fcfg = FilterConfig {
        m: a.m,
        k: a.k,
        pool_size: a.pool,
        sample_size: a.sample_size,
        workers: workers(a.workers),
        seed: a.seed,
        mutation: if a.adjacent_mutation {
            MutationKind::Adjacent
        } else {
            MutationKind::Uniform
        },
    };
    let r = run_filtering(&space, &ev, &fcfg, None)?;
    if let Some(p) = &a.history_csv {
        write_file(p, &r.history_csv())?;
    }
    outcome(
        json!({"space": space, "data": a.data.echo(), "proxy": kind, "filter": fcfg, "score": cfg}),
        &r,
    )
}

fn read_candidates(path: &Path) -> Result<Vec<ArchEncoding>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::Runtime(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Runtime(e.into()))?;
    // a bare list, a filter report, or a filter result
    let list = match &v {
        Value::Array(_) => &v,
        _ => v
            .pointer("/result/top_k")
            .or_else(|| v.get("top_k"))
            .ok_or_else(|| Failure::Usage("candidates file has no list or top_k".into()))?,
    };
    let items = list
        .as_array()
        .ok_or_else(|| Failure::Usage("candidates must be a list".into()))?;
    items
        .iter()
        .map(|x| {
            let s = x.as_str().or_else(|| x.get("arch").and_then(Value::as_str));
            match s {
                Some(s) => parse_arch(s),
                None => Err(Failure::Usage(format!("bad candidate entry {x}"))),
            }
        })
        .collect()
}

fn search_refine(a: &RefineArgs) -> CmdResult {
    let cands = read_candidates(&a.candidates)?;
    let rcfg = RefineConfig {
        u: a.u,
        eta: a.eta,
        workers: workers(a.workers),
        budget: None,
        t2_estimate: None,
        clock: if a.simulate.is_some() {
            Clock::Simulated
        } else {
            Clock::Wall
        },
    };
    let config = json!({
        "candidates": cands,
        "data": a.data.echo(),
        "simulate": a.simulate,
        "refine": rcfg,
        "batch_size": a.batch_size,
        "lr": a.lr,
        "seed": a.seed,
    });
    let r = match &a.simulate {
        Some(p) => {
            let bench = BenchFile::load(p)?;
            run_refinement(&cands, &ReplayTrainer { bench: &bench, t2: None }, &rcfg)?
        }
        None => {
            let (train, val) = train_val(&a.data, a.seed)?;
            let trainer = RealTrainer {
                train: &train,
                val: &val,
                batch_size: a.batch_size,
                lr: a.lr,
                seed: a.seed,
                cost_offset: 0.0,
            };
            run_refinement(&cands, &trainer, &rcfg)?
        }
    };
    outcome(config, &r)
}

fn search_atlas(a: &AtlasArgs) -> CmdResult {
    let space = parse_space(&a.space)?;
    let kind: ProxyKind = a.proxy.parse()?;
    let cfg = AtlasConfig {
        t_max: a.tmax,
        kind,
        score: a.score.config(a.seed)?,
        plan: PlanConfig {
            ratio: a.ratio,
            u: a.u,
            eta: a.eta,
        },
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        workers: workers(a.workers),
        probe_count: a.probes,
        ..AtlasConfig::default()
    };
    let config = json!({"space": space, "data": a.data.echo(), "atlas": cfg, "simulate": a.simulate, "t1": a.t1, "t2": a.t2});
    let report: AtlasReport = match &a.simulate {
        Some(p) => {
            let bench = BenchFile::load(p)?;
            let ds = a.data.load()?;
            run_atlas_simulated(&bench, &ds, &cfg, a.t1.unwrap_or(0.0), a.t2.unwrap_or(0.0))?
        }
        None => {
            let (train, val) = train_val(&a.data, a.seed)?;
            run_atlas(&space, &train, &val, &cfg, None)?
        }
    };
    let over = !report.within_allowance();
    let mut out = outcome(config, &report)?;
    out.over_budget = over;
    Ok(out)
}

fn run_profile(a: &ProfileArgs) -> CmdResult {
    let space = parse_space(&a.space)?;
    let kind: ProxyKind = a.proxy.parse()?;
    let cfg = a.score.config(a.seed)?;
    let (train, val) = train_val(&a.data, a.seed)?;
    let ev = ProxyEvaluator::new(kind, cfg, train.d(), Some(&train))?;
    let tc = TrainConfig {
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
    };
    let est = profile(&space, &train, &val, &ev, tc, a.probes, a.seed, None)?;
    let p = match a.tmax {
        Some(t) => Some(plan(est.t1, est.t2, t, &PlanConfig::default())?.capped(space.size())),
        None => None,
    };
    outcome(
        json!({"space": space, "data": a.data.echo(), "proxy": kind, "probes": a.probes, "tmax": a.tmax}),
        &json!({"profile": est, "plan": p}),
    )
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Bench(BenchCmd::Build(_)) => "bench build",
        Command::Bench(BenchCmd::Query(_)) => "bench query",
        Command::Bench(BenchCmd::Stats(_)) => "bench stats",
        Command::Bench(BenchCmd::Srcc(_)) => "bench srcc",
        Command::Proxy(ProxyCmd::Score(_)) => "proxy score",
        Command::Proxy(ProxyCmd::IdentityCheck(_)) => "proxy identity-check",
        Command::Search(SearchCmd::Filter(_)) => "search filter",
        Command::Search(SearchCmd::Refine(_)) => "search refine",
        Command::Search(SearchCmd::Atlas(_)) => "search atlas",
        Command::Profile(_) => "profile",
    }
}

fn dispatch(c: &Command) -> CmdResult {
    match c {
        Command::Bench(BenchCmd::Build(a)) => bench_build(a),
        Command::Bench(BenchCmd::Query(a)) => bench_query(a),
        Command::Bench(BenchCmd::Stats(a)) => bench_stats(a),
        Command::Bench(BenchCmd::Srcc(a)) => bench_srcc(a),
        Command::Proxy(ProxyCmd::Score(a)) => proxy_score(a),
        Command::Proxy(ProxyCmd::IdentityCheck(a)) => identity_check(a),
        Command::Search(SearchCmd::Filter(a)) => search_filter(a),
        Command::Search(SearchCmd::Refine(a)) => search_refine(a),
        Command::Search(SearchCmd::Atlas(a)) => search_atlas(a),
        Command::Profile(a) => run_profile(a),
    }
}

fn print_json(v: &Value) {
    match serde_json::to_string_pretty(v) {
        Ok(s) => {
            // a closed pipe (e.g. `| head`) is not worth a panic
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{s}");
        }
        Err(e) => eprintln!("error: cannot serialize report: {e}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let name = command_name(&cli.command);
    let version = env!("CARGO_PKG_VERSION");
    match dispatch(&cli.command) {
        Ok(o) => {
            print_json(&json!({
                "command": name,
                "version": version,
                "status": if o.over_budget { "over-budget" } else { "ok" },
                "config": o.config,
                "result": o.result,
            }));
            ExitCode::from(if o.over_budget { 3 } else { 0 })
        }
        Err(f) => {
            let (code, status, msg) = match f {
                Failure::Usage(m) => (1, "usage-error", m),
                Failure::Runtime(e) => (2, "error", e.to_string()),
            };
            eprintln!("error: {msg}");
            print_json(&json!({
                "command": name,
                "version": version,
                "status": status,
                "error": msg,
            }));
            ExitCode::from(code)
        }
    }
}
