use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{elapsed_since, DataMode, ProxyKind, ProxyScore, Recalibration, ScoreConfig};
use crate::data::DataBatch;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{backward, forward, BnMode, LossKind, MlpModel};

/// Lower bound returned for a trajectory whose image is a single point.
pub const TRAJECTORY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub length: f64,
    /// The layer's image did not move; `length` is [`TRAJECTORY_FLOOR`].
    pub degenerate: bool,
}

/// Arc length of hidden layer `layer`'s (1-based) image of the straight
/// input path `t·1_d`, `t ∈ [0, 1]`, discretized into `segments` pieces.
/// Batch norm is bypassed.
pub fn trajectory_length(m: &MlpModel, layer: usize, segments: usize) -> Result<Trajectory> {
    if layer == 0 || layer > m.depth() {
        return Err(Error::InvalidParameter(format!(
            "layer {layer} not in 1..={}",
            m.depth()
        )));
    }
    if segments < 2 {
        return Err(Error::InvalidParameter("trajectory needs at least 2 segments".into()));
    }
    let d = m.input_dim();
    let mut x = Matrix::zeros(segments + 1, d);
    for k in 0..=segments {
        let t = k as f64 / segments as f64;
        x.row_mut(k).fill(t);
    }
    let trace = forward(m, &x, BnMode::Bypass)?;
    let z = trace.activations(layer - 1);
    let length: f64 = (0..segments)
        .map(|k| {
            z.row(k + 1)
                .iter()
                .zip(z.row(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    if !length.is_finite() {
        return Err(Error::NonFinite(format!("trajectory length at layer {layer}")));
    }
    Ok(if length <= TRAJECTORY_FLOOR {
        Trajectory {
            length: TRAJECTORY_FLOOR,
            degenerate: true,
        }
    } else {
        Trajectory {
            length,
            degenerate: false,
        }
    })
}

/// Per-layer sums `Σ_i Σ_n |∂L/∂z_in|·z_in` for the model as given (no
/// positivity rewriting).
pub fn layer_saliency(
    m: &MlpModel,
    x: &Matrix,
    bn_mode: BnMode,
    loss: LossKind,
    labels: Option<&[u8]>,
) -> Result<Vec<f64>> {
    let trace = forward(m, x, bn_mode)?;
    let grads = backward(m, &trace, loss, labels, true)?;
    let dz = grads.activations.expect("activation gradients requested");
    Ok((0..m.depth())
        .map(|l| {
            let z = trace.activations(l);
            z.as_slice()
                .iter()
                .zip(dz[l].as_slice())
                .map(|(z, g)| g.abs() * z)
                .sum()
        })
        .collect())
}

/// ExpressFlow score of `m`. With `cfg.positivity` the model is scored
/// through a copy whose weights are replaced by their absolute values.
/// `batch` supplies labels and real rows for [`DataMode::RealBatch`]; in
/// all-ones mode only its size is used (`cfg.batch_size` when `None`).
pub fn score_expressflow(
    m: &MlpModel,
    batch: Option<&DataBatch>,
    cfg: &ScoreConfig,
) -> Result<ProxyScore> {
    let start = Instant::now();
    cfg.validate()?;
    let scored;
    let model = if cfg.positivity {
        scored = m.with_abs_weights();
        &scored
    } else {
        m
    };
    let b = batch.map_or(cfg.batch_size, DataBatch::len);
    let ones;
    let (x, labels, bn_mode) = match cfg.data_mode {
        DataMode::AllOnes => {
            ones = DataBatch::all_ones(b, model.input_dim());
            let y = batch.map(|bt| bt.y.as_slice());
            (&ones.x, y, BnMode::Bypass)
        }
        DataMode::RealBatch => {
            let bt = batch.ok_or_else(|| {
                Error::InvalidParameter("real-batch ExpressFlow needs a batch".into())
            })?;
            (&bt.x, Some(bt.y.as_slice()), cfg.real_batch_bn)
        }
    };
    let per_layer = layer_saliency(model, x, bn_mode, cfg.expressflow_loss, labels)?;

    let mut value = 0.0;
    for (l, &sal) in per_layer.iter().enumerate() {
        let width = model.layer_sizes[l + 1] as f64;
        let weight = match cfg.recalibration {
            Recalibration::None => 1.0,
            Recalibration::WidthOnly => width,
            Recalibration::DepthOnly => 1.0 / trajectory_length(model, l + 1, cfg.segments)?.length,
            Recalibration::Both => width / trajectory_length(model, l + 1, cfg.segments)?.length,
        };
        let term = weight * sal;
        if !term.is_finite() {
            return Err(Error::NonFinite(format!(
                "ExpressFlow layer {} (width {width}): saliency {sal}, weight {weight}",
                l + 1
            )));
        }
        value += term;
    }
    Ok(ProxyScore {
        value,
        kind: ProxyKind::ExpressFlow,
        degenerate: false,
        config: cfg.fingerprint(),
        wall_time_seconds: elapsed_since(start),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub neurons: usize,
    pub max_rel_deviation: f64,
}

/// Relative tolerance of [`saliency_identity_check`].
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

fn rel_dev(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Checks, on a bias-free positive-weight copy of `m` scored with the
/// sum-output loss on `1_d` (batch norm bypassed), that every hidden
/// neuron's saliency equals both the absolute sum of its outgoing
/// synaptic saliencies `Σ_v ∂L/∂w_vn · w_vn` and of its incoming ones
/// `Σ_u ∂L/∂w_nu · w_nu`.
pub fn saliency_identity_check(m: &MlpModel) -> Result<IdentityReport> {
    let model = m.with_abs_weights().without_biases();
    let x = Matrix::filled(1, model.input_dim(), 1.0);
    let trace = forward(&model, &x, BnMode::Bypass)?;
    let grads = backward(&model, &trace, LossKind::SumOutput, None, true)?;
    let dz = grads.activations.as_ref().expect("requested");
    let mut worst: f64 = 0.0;
    let mut neurons = 0;
    for l in 0..model.depth() {
        let z = trace.activations(l);
        let w_in = &model.weights[l];
        let g_in = &grads.weights[l];
        let w_out = &model.weights[l + 1];
        let g_out = &grads.weights[l + 1];
        for n in 0..model.layer_sizes[l + 1] {
            let nu = dz[l].get(0, n).abs() * z.get(0, n);
            let outgoing: f64 = (0..w_out.rows()).map(|v| g_out.get(v, n) * w_out.get(v, n)).sum();
            let incoming: f64 = (0..w_in.cols()).map(|u| g_in.get(n, u) * w_in.get(n, u)).sum();
            let dev = rel_dev(nu, outgoing.abs()).max(rel_dev(nu, incoming.abs()));
            if dev.is_nan() || dev > IDENTITY_TOLERANCE {
                return Err(Error::IdentityViolation {
                    layer: l + 1,
                    neuron: n,
                    detail: format!("nu = {nu}, outgoing = {outgoing}, incoming = {incoming}"),
                });
            }
            worst = worst.max(dev);
            neurons += 1;
        }
    }
    Ok(IdentityReport {
        neurons,
        max_rel_deviation: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    /// d = 2, one hidden neuron, all weights 1, output weight 1.
    fn unit_net() -> MlpModel {
        let mut m = MlpModel::build(&[1], 2, Init::he(0)).unwrap();
        m.weights[0] = Matrix::from_rows(&[vec![1.0, 1.0]]);
        m.weights[1] = Matrix::from_rows(&[vec![1.0]]);
        m
    }

    fn cfg(recal: Recalibration) -> ScoreConfig {
        ScoreConfig {
            batch_size: 1,
            recalibration: recal,
            ..ScoreConfig::default()
        }
    }

    #[test]
    fn identity_net_trajectory_is_one() {
        let mut m = MlpModel::build(&[1], 1, Init::he(0)).unwrap();
        m.weights[0] = Matrix::from_rows(&[vec![1.0]]);
        for s in [2, 3, 16, 101] {
            let t = trajectory_length(&m, 1, s).unwrap();
            assert!((t.length - 1.0).abs() < 1e-12);
            assert!(!t.degenerate);
        }
    }

    #[test]
    fn trajectory_scales_with_first_layer() {
        let m = MlpModel::build(&[6, 5], 3, Init::he(4)).unwrap().with_abs_weights();
        let base = trajectory_length(&m, 1, 16).unwrap().length;
        let mut scaled = m.clone();
        scaled.weights[0].map_inplace(|w| 2.5 * w);
        let t = trajectory_length(&scaled, 1, 16).unwrap().length;
        assert!((t / base - 2.5).abs() < 1e-12);
        assert!(trajectory_length(&m, 3, 16).is_err());
        assert!(trajectory_length(&m, 0, 16).is_err());
    }

    #[test]
    fn dead_layer_trajectory_is_floored() {
        let mut m = MlpModel::build(&[3], 2, Init::he(0)).unwrap();
        m.weights[0].map_inplace(|_| 0.0);
        let t = trajectory_length(&m, 1, 16).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.length, TRAJECTORY_FLOOR);
    }

    #[test]
    fn hand_computed_scores() {
        let m = unit_net();
        let s = score_expressflow(&m, None, &cfg(Recalibration::None)).unwrap();
        assert_eq!(s.value, 2.0);
        // Hand trajectory: z(t) = 2t on 16 segments, total length 2.
        let both = score_expressflow(&m, None, &cfg(Recalibration::Both)).unwrap();
        assert!((both.value - 1.0 / 2.0 * 2.0).abs() < 1e-12);
        let width = score_expressflow(&m, None, &cfg(Recalibration::WidthOnly)).unwrap();
        assert_eq!(width.value, 2.0);
    }

    #[test]
    fn zero_weights_score_zero() {
        let mut m = MlpModel::build(&[8, 4], 3, Init::he(2)).unwrap();
        for w in &mut m.weights {
            w.map_inplace(|_| 0.0);
        }
        let s = score_expressflow(&m, None, &ScoreConfig::default()).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn original_model_is_untouched() {
        let m = MlpModel::build(&[8, 4], 3, Init::he(2)).unwrap();
        let copy = m.clone();
        score_expressflow(&m, None, &ScoreConfig::default()).unwrap();
        assert_eq!(m, copy);
    }

    #[test]
    fn identity_on_unit_net_and_dead_neuron() {
        let r = saliency_identity_check(&unit_net()).unwrap();
        assert_eq!(r.neurons, 1);
        assert_eq!(r.max_rel_deviation, 0.0);
        let mut m = MlpModel::build(&[3, 2], 2, Init::he(6)).unwrap();
        // dead neuron: all incoming weights zero
        for u in 0..2 {
            m.weights[0].set(1, u, 0.0);
        }
        let r = saliency_identity_check(&m).unwrap();
        assert_eq!(r.neurons, 5);
        let model = m.with_abs_weights();
        let x = Matrix::filled(1, 2, 1.0);
        let t = forward(&model, &x, BnMode::Bypass).unwrap();
        assert_eq!(t.activations(0).get(0, 1), 0.0);
    }
}
