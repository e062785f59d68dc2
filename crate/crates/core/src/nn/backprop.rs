use serde::{Deserialize, Serialize};

use super::metrics::sigmoid;
use super::model::MlpModel;
use super::metrics::bce_loss;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// How hidden-layer batch normalization is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnMode {
    /// Normalize with the current batch's mean and (biased) variance.
    BatchStats,
    /// Treat batch norm as the identity; `γ`, `β` are ignored.
    Bypass,
    /// Normalize with the running statistics (evaluation).
    Running,
}

/// What `forward` does with a zero-variance neuron under
/// [`BnMode::BatchStats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroVariance {
    /// Let `bn_eps` absorb it (standard batch norm).
    #[default]
    Epsilon,
    Error,
    /// Bypass batch norm for that neuron.
    Bypass,
}

/// Variances below this count as zero for [`ZeroVariance`] handling.
const ZERO_VAR: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean binary cross-entropy of the sigmoid output.
    Bce,
    /// `L = Σ_i z_{L+1}(x_i)`, the raw output summed over the batch.
    SumOutput,
}

/// Cached intermediate values of one hidden layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Linear output `h = W z + b`.
    pub pre: Matrix,
    /// Normalized pre-activation (`h` itself where bypassed).
    pub normed: Matrix,
    /// ReLU output `z`.
    pub act: Matrix,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Per-neuron flag: batch norm treated as the identity.
    pub bypassed: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub hidden: Vec<LayerTrace>,
    /// Pre-sigmoid output logit per sample.
    pub output: Vec<f64>,
    pub bn_mode: BnMode,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Post-activations of hidden layer `l` (0-based).
    pub fn activations(&self, l: usize) -> &Matrix {
        &self.hidden[l].act
    }
}

/// Gradients laid out like [`MlpModel`]'s parameters.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub bn_gamma: Vec<Vec<f64>>,
    pub bn_beta: Vec<Vec<f64>>,
    /// `∂L/∂z^l` for every hidden layer (B × h_l), when requested.
    pub activations: Option<Vec<Matrix>>,
    pub loss: f64,
}

impl GradientSet {
    /// Same order as [`MlpModel::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let depth = self.bn_gamma.len();
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(self.weights[l].as_slice());
            out.extend_from_slice(&self.biases[l]);
            if l < depth {
                out.extend_from_slice(&self.bn_gamma[l]);
                out.extend_from_slice(&self.bn_beta[l]);
            }
        }
        out
    }
}

pub fn forward(m: &MlpModel, x: &Matrix, bn_mode: BnMode) -> Result<ForwardTrace> {
    forward_with(m, x, bn_mode, ZeroVariance::Epsilon)
}

pub fn forward_with(
    m: &MlpModel,
    x: &Matrix,
    bn_mode: BnMode,
    zero_var: ZeroVariance,
) -> Result<ForwardTrace> {
    if x.cols() != m.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input columns", m.input_dim()),
            got: format!("{} input columns", x.cols()),
        });
    }
    let b = x.rows();
    if b == 0 {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    if bn_mode == BnMode::BatchStats && m.depth() > 0 && b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let mut hidden = Vec::with_capacity(m.depth());
    let mut z_prev = x.clone();
    for l in 0..m.depth() {
        let width = m.layer_sizes[l + 1];
        let mut pre = z_prev.matmul_t(&m.weights[l]);
        for i in 0..b {
            for (v, bias) in pre.row_mut(i).iter_mut().zip(&m.biases[l]) {
                *v += bias;
            }
        }
        let mut mean = vec![0.0; width];
        let mut inv_std = vec![1.0; width];
        let mut bypassed = vec![bn_mode == BnMode::Bypass; width];
        match bn_mode {
            BnMode::Bypass => {}
            BnMode::Running => {
                for n in 0..width {
                    mean[n] = m.running_mean[l][n];
                    inv_std[n] = 1.0 / (m.running_var[l][n] + m.bn_eps).sqrt();
                }
            }
            BnMode::BatchStats => {
                let bf = b as f64;
                for n in 0..width {
                    let mu = (0..b).map(|i| pre.get(i, n)).sum::<f64>() / bf;
                    let var = (0..b).map(|i| (pre.get(i, n) - mu).powi(2)).sum::<f64>() / bf;
                    mean[n] = mu;
                    if var < ZERO_VAR {
                        match zero_var {
                            ZeroVariance::Epsilon => {}
                            ZeroVariance::Error => {
                                return Err(Error::ZeroVariance {
                                    layer: l + 1,
                                    neuron: n,
                                })
                            }
                            ZeroVariance::Bypass => {
                                bypassed[n] = true;
                                mean[n] = 0.0;
                                continue;
                            }
                        }
                    }
                    inv_std[n] = 1.0 / (var + m.bn_eps).sqrt();
                }
            }
        }
        let mut normed = pre.clone();
        let mut act = Matrix::zeros(b, width);
        for i in 0..b {
            for n in 0..width {
                let (xn, out) = if bypassed[n] {
                    let h = pre.get(i, n);
                    (h, h)
                } else {
                    let xh = (pre.get(i, n) - mean[n]) * inv_std[n];
                    (xh, m.bn_gamma[l][n] * xh + m.bn_beta[l][n])
                };
                normed.set(i, n, xn);
                act.set(i, n, out.max(0.0));
            }
        }
        z_prev = act.clone();
        hidden.push(LayerTrace {
            pre,
            normed,
            act,
            mean,
            inv_std,
            bypassed,
        });
    }
    let head = m.weights.len() - 1;
    let out = z_prev.matmul_t(&m.weights[head]);
    let output = (0..b).map(|i| out.get(i, 0) + m.biases[head][0]).collect();
    Ok(ForwardTrace {
        input: x.clone(),
        hidden,
        output,
        bn_mode,
    })
}

/// Backpropagates the requested loss through a trace of `m`.
pub fn backward(
    m: &MlpModel,
    trace: &ForwardTrace,
    loss: LossKind,
    labels: Option<&[u8]>,
    want_activation_grads: bool,
) -> Result<GradientSet> {
    let b = trace.batch_size();
    let (value, g_out) = match loss {
        LossKind::SumOutput => (trace.output.iter().sum(), vec![1.0; b]),
        LossKind::Bce => {
            let y = labels.ok_or(Error::MissingLabels)?;
            if y.len() != b {
                return Err(Error::ShapeMismatch {
                    expected: format!("{b} labels"),
                    got: format!("{} labels", y.len()),
                });
            }
            let g = trace
                .output
                .iter()
                .zip(y)
                .map(|(&s, &yi)| (sigmoid(s) - f64::from(yi)) / b as f64)
                .collect();
            (bce_loss(&trace.output, y), g)
        }
    };
    let mut grads = backward_from(m, trace, &g_out, want_activation_grads);
    grads.loss = value;
    Ok(grads)
}

/// Backpropagates an arbitrary output gradient `∂L/∂z_{L+1}` (one entry per
/// sample). The returned `loss` is zero.
pub fn backward_from(
    m: &MlpModel,
    trace: &ForwardTrace,
    g_out: &[f64],
    want_activation_grads: bool,
) -> GradientSet {
    let b = trace.batch_size();
    let depth = m.depth();
    let head = m.weights.len() - 1;
    let mut w_grads: Vec<Matrix> = m.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
    let mut b_grads: Vec<Vec<f64>> = m.biases.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut g_grads: Vec<Vec<f64>> = m.bn_gamma.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut be_grads: Vec<Vec<f64>> = m.bn_beta.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut act_grads: Vec<Matrix> = Vec::new();

    // Output head.
    let g_out_m = Matrix::from_vec(b, 1, g_out.to_vec());
    let z_last = if depth == 0 { &trace.input } else { &trace.hidden[depth - 1].act };
    w_grads[head] = g_out_m.t_matmul(z_last);
    b_grads[head][0] = g_out.iter().sum();
    let mut dz = g_out_m.matmul(&m.weights[head]);

    for l in (0..depth).rev() {
        if want_activation_grads {
            act_grads.push(dz.clone());
        }
        let lt = &trace.hidden[l];
        let width = m.layer_sizes[l + 1];
        // through ReLU: dz ⊙ [bn_out > 0]
        let mut d_bn = dz;
        for i in 0..b {
            for n in 0..width {
                if lt.act.get(i, n) <= 0.0 {
                    d_bn.set(i, n, 0.0);
                }
            }
        }
        let mut dh = Matrix::zeros(b, width);
        for n in 0..width {
            if lt.bypassed[n] {
                for i in 0..b {
                    dh.set(i, n, d_bn.get(i, n));
                }
                continue;
            }
            let gamma = m.bn_gamma[l][n];
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for i in 0..b {
                let d = d_bn.get(i, n);
                sum_d += d;
                sum_dx += d * lt.normed.get(i, n);
            }
            g_grads[l][n] = sum_dx;
            be_grads[l][n] = sum_d;
            match trace.bn_mode {
                BnMode::BatchStats => {
                    // dxhat = d·γ; dh = inv_std/B · (B·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    let bf = b as f64;
                    let (s1, s2) = (gamma * sum_d, gamma * sum_dx);
                    for i in 0..b {
                        let dxh = gamma * d_bn.get(i, n);
                        let v = lt.inv_std[n] / bf * (bf * dxh - s1 - lt.normed.get(i, n) * s2);
                        dh.set(i, n, v);
                    }
                }
                BnMode::Running => {
                    for i in 0..b {
                        dh.set(i, n, d_bn.get(i, n) * gamma * lt.inv_std[n]);
                    }
                }
                BnMode::Bypass => unreachable!("bypass handled per neuron"),
            }
        }
        let z_in = if l == 0 { &trace.input } else { &trace.hidden[l - 1].act };
        w_grads[l] = dh.t_matmul(z_in);
        for n in 0..width {
            b_grads[l][n] = (0..b).map(|i| dh.get(i, n)).sum();
        }
        dz = dh.matmul(&m.weights[l]);
    }
    act_grads.reverse();
    GradientSet {
        weights: w_grads,
        biases: b_grads,
        bn_gamma: g_grads,
        bn_beta: be_grads,
        activations: want_activation_grads.then_some(act_grads),
        loss: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, MlpModel};

    fn one_neuron() -> MlpModel {
        let mut m = MlpModel::build(&[1], 2, Init::he(0)).unwrap();
        m.weights[0] = Matrix::from_rows(&[vec![1.0, 1.0]]);
        m.weights[1] = Matrix::from_rows(&[vec![1.0]]);
        m
    }

    #[test]
    fn hand_forward() {
        let m = one_neuron();
        let t = forward(&m, &Matrix::from_rows(&[vec![1.0, 1.0]]), BnMode::Bypass).unwrap();
        assert_eq!(t.hidden[0].pre.get(0, 0), 2.0);
        assert_eq!(t.hidden[0].act.get(0, 0), 2.0);
        assert_eq!(t.output, vec![2.0]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = MlpModel::build(&[4, 3], 3, Init::he(1)).unwrap();
        for w in &mut m.weights {
            w.map_inplace(|_| 0.0);
        }
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]);
        for mode in [BnMode::Bypass, BnMode::BatchStats, BnMode::Running] {
            let t = forward(&m, &x, mode).unwrap();
            assert!(t.output.iter().all(|&o| o == 0.0), "{mode:?}");
        }
    }

    #[test]
    fn zero_variance_policies() {
        let m = MlpModel::build(&[3], 2, Init::he(2)).unwrap();
        let x = Matrix::filled(4, 2, 1.0);
        assert!(matches!(
            forward_with(&m, &x, BnMode::BatchStats, ZeroVariance::Error),
            Err(Error::ZeroVariance { layer: 1, .. })
        ));
        let t = forward_with(&m, &x, BnMode::BatchStats, ZeroVariance::Bypass).unwrap();
        assert!(t.hidden[0].bypassed.iter().all(|&b| b));
        let bypass = forward(&m, &x, BnMode::Bypass).unwrap();
        assert_eq!(t.output, bypass.output);
        let eps = forward(&m, &x, BnMode::BatchStats).unwrap();
        assert!(eps.output.iter().all(|o| o.is_finite()));
    }

    #[test]
    fn shape_and_batch_errors() {
        let m = MlpModel::build(&[3], 2, Init::he(2)).unwrap();
        assert!(matches!(
            forward(&m, &Matrix::zeros(2, 3), BnMode::Bypass),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            forward(&m, &Matrix::zeros(1, 2), BnMode::BatchStats),
            Err(Error::BatchTooSmall(1))
        ));
        let t = forward(&m, &Matrix::zeros(1, 2), BnMode::Bypass).unwrap();
        assert!(matches!(backward(&m, &t, LossKind::Bce, None, false), Err(Error::MissingLabels)));
    }

    #[test]
    fn linear_neuron_sum_output_gradient() {
        let mut m = MlpModel::build(&[], 2, Init::he(0)).unwrap();
        m.weights[0] = Matrix::from_rows(&[vec![0.3, -0.7]]);
        let t = forward(&m, &Matrix::from_rows(&[vec![1.0, 1.0]]), BnMode::Bypass).unwrap();
        let g = backward(&m, &t, LossKind::SumOutput, None, false).unwrap();
        assert_eq!(g.weights[0].as_slice(), &[1.0, 1.0]);
        assert_eq!(g.biases[0], vec![1.0]);
    }

    #[test]
    fn bce_logit_gradient_at_half() {
        let m = MlpModel::build(&[], 1, Init::he(0)).unwrap();
        let mut m0 = m.clone();
        m0.weights[0] = Matrix::from_rows(&[vec![0.0]]);
        let t = forward(&m0, &Matrix::from_rows(&[vec![1.0]]), BnMode::Bypass).unwrap();
        let g = backward(&m0, &t, LossKind::Bce, Some(&[1]), false).unwrap();
        // ∂L/∂logit = p − y = −0.5, the bias sees it directly.
        assert_eq!(g.biases[0][0], -0.5);
    }

    #[test]
    fn relu_outputs_nonnegative() {
        let m = MlpModel::build(&[7, 5, 3], 4, Init::he(5)).unwrap();
        let x = Matrix::from_vec(6, 4, (0..24).map(|i| (i as f64 * 0.37).sin()).collect());
        for mode in [BnMode::Bypass, BnMode::BatchStats] {
            let t = forward(&m, &x, mode).unwrap();
            assert!(t.hidden.iter().all(|h| h.act.as_slice().iter().all(|&v| v >= 0.0)));
        }
    }
}
