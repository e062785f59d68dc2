use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};

use super::{elapsed_since, ProxyKind, ProxyScore, ScoreConfig};
use crate::data::DataBatch;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{backward, backward_from, forward, BnMode, LossKind, MlpModel};

/// NTK eigenvalues at or below this make the condition number degenerate.
const NTK_EIG_FLOOR: f64 = 1e-12;

pub(super) fn score(
    kind: ProxyKind,
    m: &MlpModel,
    batch: &DataBatch,
    cfg: &ScoreConfig,
) -> Result<ProxyScore> {
    let start = Instant::now();
    let (value, degenerate) = match kind {
        ProxyKind::ExpressFlow => unreachable!("dispatched separately"),
        ProxyKind::SynFlow => (synflow(m, batch.len())?, false),
        ProxyKind::Snip => {
            let (g, theta) = bce_gradient(m, batch)?;
            (g.iter().zip(&theta).map(|(g, t)| (g * t).abs()).sum(), false)
        }
        ProxyKind::GradNorm => {
            let (g, _) = bce_gradient(m, batch)?;
            (norm(&g), false)
        }
        ProxyKind::WeightNorm => (norm(&m.params_flat()), false),
        ProxyKind::Fisher => (fisher(m, batch)?, false),
        ProxyKind::NasWot => naswot(m, batch)?,
        ProxyKind::GraSP => (grasp(m, batch)?, false),
        ProxyKind::NtkTrace => {
            let gram = ntk_gram(m, &batch.x)?;
            ((0..gram.rows()).map(|i| gram.get(i, i)).sum(), false)
        }
        ProxyKind::NtkCond => ntk_cond(m, &batch.x)?,
    };
    if !degenerate && !value.is_finite() {
        return Err(Error::NonFinite(format!("{kind} score {value}")));
    }
    Ok(ProxyScore {
        value,
        kind,
        degenerate,
        config: cfg.fingerprint(),
        wall_time_seconds: elapsed_since(start),
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn data_bn_mode(m: &MlpModel, b: usize) -> Result<BnMode> {
    if m.depth() > 0 && b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    Ok(BnMode::BatchStats)
}

/// `(∂L/∂θ, θ)` for mean BCE on `batch` with batch statistics.
fn bce_gradient(m: &MlpModel, batch: &DataBatch) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = forward(m, &batch.x, data_bn_mode(m, batch.len())?)?;
    let g = backward(m, &t, LossKind::Bce, Some(&batch.y), false)?;
    Ok((g.flat(), m.params_flat()))
}

/// `Σ ∂L/∂θ ⊙ θ` on a positive-weight copy with the sum-output loss on
/// `b` copies of `1_d`.
fn synflow(m: &MlpModel, b: usize) -> Result<f64> {
    let pos = m.with_abs_weights();
    let x = Matrix::filled(b, pos.input_dim(), 1.0);
    let t = forward(&pos, &x, BnMode::Bypass)?;
    let g = backward(&pos, &t, LossKind::SumOutput, None, false)?;
    Ok(g.flat().iter().zip(pos.params_flat()).map(|(g, t)| g * t).sum())
}

/// `Σ_l Σ_n (Σ_i ∂L/∂z_in · z_in)²` over hidden post-activations.
fn fisher(m: &MlpModel, batch: &DataBatch) -> Result<f64> {
    let t = forward(m, &batch.x, data_bn_mode(m, batch.len())?)?;
    let g = backward(m, &t, LossKind::Bce, Some(&batch.y), true)?;
    let dz = g.activations.expect("requested");
    let mut s = 0.0;
    for l in 0..m.depth() {
        let z = t.activations(l);
        for n in 0..z.cols() {
            let per_neuron: f64 = (0..z.rows()).map(|i| dz[l].get(i, n) * z.get(i, n)).sum();
            s += per_neuron * per_neuron;
        }
    }
    Ok(s)
}

/// `log|K_H|` with `K_H[i,j] = N_a − hamming(c_i, c_j)` over binary ReLU
/// codes. Singular kernels give `−∞` flagged degenerate.
fn naswot(m: &MlpModel, batch: &DataBatch) -> Result<(f64, bool)> {
    let t = forward(m, &batch.x, data_bn_mode(m, batch.len())?)?;
    let b = batch.len();
    let codes: Vec<Vec<bool>> = (0..b)
        .map(|i| {
            t.hidden
                .iter()
                .flat_map(|lt| lt.act.row(i).iter().map(|&v| v > 0.0))
                .collect()
        })
        .collect();
    let n_a = codes.first().map_or(0, Vec::len) as f64;
    let k = DMatrix::from_fn(b, b, |i, j| {
        let ham = codes[i].iter().zip(&codes[j]).filter(|(a, b)| a != b).count();
        n_a - ham as f64
    });
    // K is an integer matrix, so a nonsingular K has |det| ≥ 1.
    let lu = k.lu();
    let u = lu.u();
    let mut logdet = 0.0;
    for i in 0..b {
        let d = u[(i, i)].abs();
        if d == 0.0 {
            return Ok((f64::NEG_INFINITY, true));
        }
        logdet += d.ln();
    }
    if logdet < 0.5f64.ln() {
        return Ok((f64::NEG_INFINITY, true));
    }
    Ok((logdet, false))
}

/// `Σ −(H g) ⊙ θ` with the Hessian-vector product from a central
/// difference of gradients along `g`, step `1e-3·‖θ‖/(‖g‖ + 1e-12)`.
fn grasp(m: &MlpModel, batch: &DataBatch) -> Result<f64> {
    let (g, theta) = bce_gradient(m, batch)?;
    let eps = 1e-3 * norm(&theta) / (norm(&g) + 1e-12);
    let shifted = |sign: f64| -> Result<Vec<f64>> {
        let mut mm = m.clone();
        let p: Vec<f64> = theta.iter().zip(&g).map(|(t, g)| t + sign * eps * g).collect();
        mm.set_params_flat(&p);
        Ok(bce_gradient(&mm, batch)?.0)
    };
    let plus = shifted(1.0)?;
    let minus = shifted(-1.0)?;
    let mut s = 0.0;
    for i in 0..theta.len() {
        let hg = (plus[i] - minus[i]) / (2.0 * eps);
        if !hg.is_finite() {
            return Err(Error::NonFinite(format!("GraSP Hessian-vector product at parameter {i}")));
        }
        s -= hg * theta[i];
    }
    Ok(s)
}

/// Per-sample output Jacobian `J[i, p] = ∂z_{L+1}(x_i)/∂θ_p` under batch
/// statistics (bypass for a single row or a model without hidden layers).
pub fn jacobian(m: &MlpModel, x: &Matrix) -> Result<Matrix> {
    let b = x.rows();
    let mode = if m.depth() > 0 && b >= 2 {
        BnMode::BatchStats
    } else if m.depth() == 0 {
        BnMode::Bypass
    } else {
        return Err(Error::BatchTooSmall(b));
    };
    let t = forward(m, x, mode)?;
    let p = m.param_count().total();
    let mut j = Matrix::zeros(b, p);
    let mut seed = vec![0.0; b];
    for i in 0..b {
        seed.fill(0.0);
        seed[i] = 1.0;
        let g = backward_from(m, &t, &seed, false).flat();
        j.row_mut(i).copy_from_slice(&g);
    }
    Ok(j)
}

/// Empirical NTK Gram matrix `Θ = J·Jᵀ`.
pub fn ntk_gram(m: &MlpModel, x: &Matrix) -> Result<Matrix> {
    let j = jacobian(m, x)?;
    Ok(j.matmul_t(&j))
}

fn ntk_cond(m: &MlpModel, x: &Matrix) -> Result<(f64, bool)> {
    let gram = ntk_gram(m, x)?;
    let b = gram.rows();
    let dm = DMatrix::from_fn(b, b, |i, j| gram.get(i, j));
    let eig = SymmetricEigen::new(dm).eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if !max.is_finite() || !min.is_finite() {
        return Err(Error::NonFinite("NTK eigenvalues".into()));
    }
    if min <= NTK_EIG_FLOOR {
        return Ok((f64::INFINITY, true));
    }
    Ok((max / min, false))
}
