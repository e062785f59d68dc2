//! Training-free architecture scores.
//!
//! [`ProxyKind::ExpressFlow`] aggregates neuron saliency
//! `ν = |∂L/∂z|·z` per hidden layer, reweighted by width over trajectory
//! length. The remaining kinds are the usual zero-cost baselines. Every
//! score is a pure function of (model, batch, config).

mod baselines;
mod expressflow;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{DataBatch, Dataset};
use crate::error::{Error, Result};
use crate::nn::{BnMode, Init, InitScheme, LossKind, MlpModel};
use crate::rng;
use crate::space::ArchEncoding;

pub use baselines::{jacobian, ntk_gram};
pub use expressflow::{
    layer_saliency, saliency_identity_check, score_expressflow, trajectory_length, IdentityReport,
    Trajectory, TRAJECTORY_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyKind {
    ExpressFlow,
    SynFlow,
    Snip,
    GradNorm,
    Fisher,
    NasWot,
    GraSP,
    NtkTrace,
    NtkCond,
    WeightNorm,
}

impl ProxyKind {
    pub const ALL: [ProxyKind; 10] = [
        ProxyKind::ExpressFlow,
        ProxyKind::SynFlow,
        ProxyKind::Snip,
        ProxyKind::GradNorm,
        ProxyKind::Fisher,
        ProxyKind::NasWot,
        ProxyKind::GraSP,
        ProxyKind::NtkTrace,
        ProxyKind::NtkCond,
        ProxyKind::WeightNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProxyKind::ExpressFlow => "expressflow",
            ProxyKind::SynFlow => "synflow",
            ProxyKind::Snip => "snip",
            ProxyKind::GradNorm => "gradnorm",
            ProxyKind::Fisher => "fisher",
            ProxyKind::NasWot => "naswot",
            ProxyKind::GraSP => "grasp",
            ProxyKind::NtkTrace => "ntktrace",
            ProxyKind::NtkCond => "ntkcond",
            ProxyKind::WeightNorm => "weightnorm",
        }
    }

    /// Whether scoring needs a real labelled batch under `cfg`.
    pub fn needs_data(self, cfg: &ScoreConfig) -> bool {
        match self {
            ProxyKind::SynFlow | ProxyKind::WeightNorm => false,
            ProxyKind::ExpressFlow => {
                cfg.data_mode == DataMode::RealBatch || cfg.expressflow_loss == LossKind::Bce
            }
            _ => true,
        }
    }
}

impl fmt::Display for ProxyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProxyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace(['-', '_'], "");
        ProxyKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown proxy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataMode {
    /// Scores on a labelled batch drawn from the dataset; batch norm as set
    /// by `ScoreConfig::real_batch_bn`.
    RealBatch,
    /// Scores on `B` copies of `1_d` with batch norm bypassed.
    #[default]
    AllOnes,
}

/// Per-layer weight applied to summed neuron saliency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recalibration {
    /// `K_l / ℓ(z^l)`
    #[default]
    Both,
    /// `K_l`
    WidthOnly,
    /// `1 / ℓ(z^l)`
    DepthOnly,
    None,
}

impl FromStr for Recalibration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Recalibration::Both),
            "width-only" | "width" => Ok(Recalibration::WidthOnly),
            "depth-only" | "depth" => Ok(Recalibration::DepthOnly),
            "none" => Ok(Recalibration::None),
            _ => Err(Error::InvalidParameter(format!("unknown recalibration {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub batch_size: usize,
    pub init: InitScheme,
    pub positivity: bool,
    pub data_mode: DataMode,
    pub recalibration: Recalibration,
    pub segments: usize,
    pub seed: u64,
    /// Loss used by ExpressFlow; BCE is kept for ablations.
    pub expressflow_loss: LossKind,
    /// Batch norm treatment for real-batch ExpressFlow.
    pub real_batch_bn: BnMode,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            init: InitScheme::He,
            positivity: true,
            data_mode: DataMode::AllOnes,
            recalibration: Recalibration::Both,
            segments: 16,
            seed: 0,
            expressflow_loss: LossKind::SumOutput,
            real_batch_bn: BnMode::Bypass,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("score batch size must be ≥ 1".into()));
        }
        if self.segments < 2 {
            return Err(Error::InvalidParameter("trajectory segments must be ≥ 2".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "B={},init={:?},positivity={},data={:?},recal={:?},S={},seed={},loss={:?},bn={:?}",
            self.batch_size,
            self.init,
            self.positivity,
            self.data_mode,
            self.recalibration,
            self.segments,
            self.seed,
            self.expressflow_loss,
            self.real_batch_bn
        )
    }

    /// Initialization used when scoring `enc`: the configured scheme seeded
    /// by `derive_seed(seed, key)`.
    pub fn init_for(&self, enc: &ArchEncoding) -> Init {
        Init {
            scheme: self.init,
            seed: rng::derive_seed(self.seed, &enc.key()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyScore {
    pub value: f64,
    pub kind: ProxyKind,
    /// Set when the value is a sentinel (singular kernel, vanishing
    /// eigenvalue) rather than a finite measurement.
    pub degenerate: bool,
    pub config: String,
    pub wall_time_seconds: f64,
}

impl ProxyScore {
    /// Value used for ranking: degenerate or NaN scores sort below every
    /// finite score.
    pub fn rank_key(&self) -> f64 {
        if self.degenerate || self.value.is_nan() {
            f64::NEG_INFINITY
        } else {
            self.value
        }
    }
}

pub(crate) fn elapsed_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64().max(1e-9)
}

/// Scores a built model on `batch` with the given proxy.
pub fn score_proxy(
    kind: ProxyKind,
    m: &MlpModel,
    batch: &DataBatch,
    cfg: &ScoreConfig,
) -> Result<ProxyScore> {
    cfg.validate()?;
    if batch.x.cols() != m.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input columns", m.input_dim()),
            got: format!("{} input columns", batch.x.cols()),
        });
    }
    match kind {
        ProxyKind::ExpressFlow => score_expressflow(m, Some(batch), cfg),
        _ => baselines::score(kind, m, batch, cfg),
    }
}

/// Scores architectures by encoding: builds each model from a seed derived
/// from the configuration and the encoding, and reuses one fixed batch.
#[derive(Debug, Clone)]
pub struct ProxyEvaluator {
    pub kind: ProxyKind,
    pub cfg: ScoreConfig,
    d: usize,
    batch: DataBatch,
}

impl ProxyEvaluator {
    /// `data` is required for data-driven kinds; the batch is
    /// `cfg.batch_size` rows sampled with `derive_seed(cfg.seed, "batch")`.
    pub fn new(kind: ProxyKind, cfg: ScoreConfig, d: usize, data: Option<&Dataset>) -> Result<Self> {
        cfg.validate()?;
        let batch = if kind.needs_data(&cfg) {
            let ds = data.ok_or_else(|| {
                Error::InvalidParameter(format!("proxy {kind} needs a dataset batch"))
            })?;
            if ds.d() != d {
                return Err(Error::ShapeMismatch {
                    expected: format!("{d} input columns"),
                    got: format!("{} input columns", ds.d()),
                });
            }
            ds.sample_batch(cfg.batch_size, rng::derive_seed(cfg.seed, "batch"))?
        } else {
            DataBatch::all_ones(cfg.batch_size, d)
        };
        Ok(Self { kind, cfg, d, batch })
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn batch(&self) -> &DataBatch {
        &self.batch
    }

    pub fn model_for(&self, enc: &ArchEncoding) -> Result<MlpModel> {
        MlpModel::build(enc.sizes(), self.d, self.cfg.init_for(enc))
    }

    pub fn score(&self, enc: &ArchEncoding) -> Result<ProxyScore> {
        let start = Instant::now();
        let m = self.model_for(enc)?;
        let mut s = score_proxy(self.kind, &m, &self.batch, &self.cfg)?;
        s.wall_time_seconds = elapsed_since(start);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in ProxyKind::ALL {
            assert_eq!(k.name().parse::<ProxyKind>().unwrap(), k);
        }
        assert_eq!("ExpressFlow".parse::<ProxyKind>().unwrap(), ProxyKind::ExpressFlow);
        assert!("ntktraceappx".parse::<ProxyKind>().is_err());
    }

    #[test]
    fn degenerate_scores_rank_lowest() {
        let s = ProxyScore {
            value: f64::INFINITY,
            kind: ProxyKind::NtkCond,
            degenerate: true,
            config: String::new(),
            wall_time_seconds: 1e-3,
        };
        assert_eq!(s.rank_key(), f64::NEG_INFINITY);
    }

    #[test]
    fn evaluator_requires_data_for_data_driven_kinds() {
        let cfg = ScoreConfig::default();
        assert!(ProxyEvaluator::new(ProxyKind::Snip, cfg, 4, None).is_err());
        let ev = ProxyEvaluator::new(ProxyKind::ExpressFlow, cfg, 4, None).unwrap();
        let enc: ArchEncoding = "8-4".parse().unwrap();
        let a = ev.score(&enc).unwrap();
        let b = ev.score(&enc).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert!(a.wall_time_seconds > 0.0);
    }
}
