use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

pub const BN_EPS: f64 = 1e-5;

/// Weight initialization rule. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// `N(0, 1/fan_in)`
    LeCun,
    /// `N(0, 2/(fan_in + fan_out))`
    Xavier,
    /// `N(0, 2/fan_in)`
    #[default]
    He,
}

impl InitScheme {
    pub fn std(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            InitScheme::LeCun => (1.0 / fan_in as f64).sqrt(),
            InitScheme::Xavier => (2.0 / (fan_in + fan_out) as f64).sqrt(),
            InitScheme::He => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lecun" => Ok(InitScheme::LeCun),
            "xavier" => Ok(InitScheme::Xavier),
            "he" => Ok(InitScheme::He),
            _ => Err(Error::InvalidParameter(format!("unknown init scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Init {
    pub scheme: InitScheme,
    pub seed: u64,
}

impl Init {
    pub fn he(seed: u64) -> Self {
        Self {
            scheme: InitScheme::He,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    /// Linear weights and biases.
    pub linear: usize,
    /// Batch-norm scale and shift.
    pub batch_norm: usize,
}

impl ParamCount {
    pub fn total(self) -> usize {
        self.linear + self.batch_norm
    }
}

/// Adam moment estimates over the flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// MLP parameters. `weights[l]` is `(fan_out × fan_in)`; the last entry is
/// the output head. Hidden layers additionally own batch-norm scale/shift
/// and running statistics (used for evaluation only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub bn_gamma: Vec<Vec<f64>>,
    pub bn_beta: Vec<Vec<f64>>,
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
    pub bn_eps: f64,
    pub adam: AdamState,
}

impl MlpModel {
    /// Builds a model with hidden widths `hidden` over `d` inputs. An empty
    /// `hidden` gives a single linear neuron.
    pub fn build(hidden: &[usize], d: usize, init: Init) -> Result<Self> {
        if d == 0 {
            return Err(Error::ZeroLayerSize(0));
        }
        if let Some(i) = hidden.iter().position(|&h| h == 0) {
            return Err(Error::ZeroLayerSize(i + 1));
        }
        let mut layer_sizes = Vec::with_capacity(hidden.len() + 2);
        layer_sizes.push(d);
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);

        let mut r = rng::seeded(init.seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = init.scheme.std(fan_in, fan_out);
            let data = (0..fan_in * fan_out)
                .map(|_| std * r.sample::<f64, _>(StandardNormal))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            bn_gamma: hidden.iter().map(|&h| vec![1.0; h]).collect(),
            bn_beta: hidden.iter().map(|&h| vec![0.0; h]).collect(),
            running_mean: hidden.iter().map(|&h| vec![0.0; h]).collect(),
            running_var: hidden.iter().map(|&h| vec![1.0; h]).collect(),
            layer_sizes,
            weights,
            biases,
            bn_eps: BN_EPS,
            adam: AdamState::default(),
        })
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    pub fn param_count(&self) -> ParamCount {
        let linear = self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        let batch_norm = 2 * self.hidden_sizes().iter().sum::<usize>();
        ParamCount { linear, batch_norm }
    }

    /// Flat parameter vector: per hidden layer `W, b, γ, β`, then `W, b` of
    /// the output head.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count().total());
        for l in 0..self.weights.len() {
            out.extend_from_slice(self.weights[l].as_slice());
            out.extend_from_slice(&self.biases[l]);
            if l < self.depth() {
                out.extend_from_slice(&self.bn_gamma[l]);
                out.extend_from_slice(&self.bn_beta[l]);
            }
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count().total(), "flat parameter length");
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        let depth = self.depth();
        for l in 0..self.weights.len() {
            take(self.weights[l].as_mut_slice());
            take(&mut self.biases[l]);
            if l < depth {
                take(&mut self.bn_gamma[l]);
                take(&mut self.bn_beta[l]);
            }
        }
    }

    /// Copy with every linear weight replaced by its absolute value.
    pub fn with_abs_weights(&self) -> Self {
        let mut m = self.clone();
        for w in &mut m.weights {
            w.map_inplace(f64::abs);
        }
        m
    }

    /// Copy with every linear bias set to zero.
    pub fn without_biases(&self) -> Self {
        let mut m = self.clone();
        for b in &mut m.biases {
            b.fill(0.0);
        }
        m
    }

    /// Writes the model (sizes, parameters, running stats, optimizer state)
    /// as JSON.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        let expect = m.layer_sizes.len().saturating_sub(1);
        if m.weights.len() != expect || m.biases.len() != expect {
            return Err(Error::ShapeMismatch {
                expected: format!("{expect} layers"),
                got: format!("{} layers", m.weights.len()),
            });
        }
        Ok(m)
    }
}
