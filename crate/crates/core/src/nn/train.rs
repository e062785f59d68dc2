use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::backprop::{backward, forward, BnMode, LossKind};
use super::metrics::{auc, bce_loss};
use super::model::MlpModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 0.1,
            seed: 0,
        }
    }
}

/// Cosine learning-rate schedule over a fixed horizon of epochs.
///
/// Epoch `e` (counted from the start of the horizon) uses
/// `lr · ½(1 + cos(π·e/horizon))` and shuffles with
/// `derive_index(seed, e)`, so a run split into consecutive calls with
/// advancing `start_epoch` replays the same trajectory as a single call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub start_epoch: usize,
    pub horizon: usize,
}

impl Schedule {
    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        if self.horizon == 0 {
            return base;
        }
        let frac = (epoch as f64 / self.horizon as f64).min(1.0);
        base * 0.5 * (1.0 + (PI * frac).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_auc: f64,
    pub val_auc: f64,
    pub wall_time: f64,
}

/// Full-set loss and AUC with running batch-norm statistics.
pub fn evaluate(m: &MlpModel, ds: &Dataset) -> Result<(f64, f64)> {
    let t = forward(m, ds.features(), BnMode::Running)?;
    let loss = bce_loss(&t.output, ds.labels());
    Ok((loss, auc(&t.output, ds.labels())?))
}

/// Trains `epochs` epochs with a cosine schedule spanning exactly those
/// epochs.
pub fn train_epochs(
    m: &mut MlpModel,
    train: &Dataset,
    val: &Dataset,
    epochs: usize,
    cfg: TrainConfig,
) -> Result<Vec<EpochRecord>> {
    train_epochs_with(
        m,
        train,
        val,
        epochs,
        cfg,
        Schedule {
            start_epoch: 0,
            horizon: epochs,
        },
    )
}

/// Trains `epochs` further epochs in place, continuing `schedule` from
/// `schedule.start_epoch`. Adam state lives in the model, so consecutive
/// calls continue the optimizer trajectory.
///
/// After every epoch the running batch-norm statistics are set to the exact
/// statistics of the full training set, then both splits are evaluated.
pub fn train_epochs_with(
    m: &mut MlpModel,
    train: &Dataset,
    val: &Dataset,
    epochs: usize,
    cfg: TrainConfig,
    schedule: Schedule,
) -> Result<Vec<EpochRecord>> {
    if epochs == 0 {
        return Err(Error::InvalidParameter("epochs must be at least 1".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate {}", cfg.lr)));
    }
    let n_params = m.param_count().total();
    if m.adam.m.len() != n_params {
        m.adam.m = vec![0.0; n_params];
        m.adam.v = vec![0.0; n_params];
        m.adam.step = 0;
    }
    let mut records = Vec::with_capacity(epochs);
    for k in 0..epochs {
        let epoch = schedule.start_epoch + k;
        let start = Instant::now();
        let lr = schedule.lr_at(cfg.lr, epoch);
        let seed = rng::derive_index(cfg.seed, epoch as u64);
        for batch in train.batches(cfg.batch_size.min(train.len()), seed, true)? {
            // A single trailing row has no batch statistics.
            if batch.len() < 2 && m.depth() > 0 {
                continue;
            }
            let trace = forward(m, &batch.x, BnMode::BatchStats)?;
            let grads = backward(m, &trace, LossKind::Bce, Some(&batch.y), false)?;
            if !grads.loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "minibatch loss {} at epoch {epoch}",
                    grads.loss
                )));
            }
            adam_step(m, &grads.flat(), lr);
        }
        refresh_running_stats(m, train)?;
        let (train_loss, train_auc) = evaluate(m, train)?;
        let (val_loss, val_auc) = evaluate(m, val)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "epoch {epoch}: train loss {train_loss}, val loss {val_loss}"
            )));
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_auc,
            val_auc,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok(records)
}

fn adam_step(m: &mut MlpModel, grad: &[f64], lr: f64) {
    let mut params = m.params_flat();
    let st = &mut m.adam;
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        st.m[i] = BETA1 * st.m[i] + (1.0 - BETA1) * g;
        st.v[i] = BETA2 * st.v[i] + (1.0 - BETA2) * g * g;
        let mhat = st.m[i] / c1;
        let vhat = st.v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
    m.set_params_flat(&params);
}

/// Sets running statistics to the training set's per-layer statistics.
fn refresh_running_stats(m: &mut MlpModel, train: &Dataset) -> Result<()> {
    if m.depth() == 0 {
        return Ok(());
    }
    let t = forward(m, train.features(), BnMode::BatchStats)?;
    for (l, lt) in t.hidden.iter().enumerate() {
        for n in 0..lt.mean.len() {
            m.running_mean[l][n] = lt.mean[n];
            m.running_var[l][n] = (1.0 / (lt.inv_std[n] * lt.inv_std[n]) - m.bn_eps).max(0.0);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, split, SplitSpec, SyntheticSpec};
    use crate::nn::Init;

    fn data(noise: f64) -> (Dataset, Dataset) {
        let ds = make_synthetic(SyntheticSpec {
            n: 400,
            d: 4,
            noise,
            seed: 3,
        })
        .unwrap();
        split(&ds, SplitSpec::default()).unwrap()
    }

    #[test]
    fn zero_lr_is_identity_on_parameters() {
        let (tr, va) = data(0.0);
        let mut m = MlpModel::build(&[8, 4], 4, Init::he(1)).unwrap();
        let before = m.params_flat();
        let recs = train_epochs(&mut m, &tr, &va, 3, TrainConfig { lr: 0.0, batch_size: 32, seed: 0 }).unwrap();
        assert_eq!(m.params_flat(), before);
        assert!(recs.windows(2).all(|w| w[0].val_auc == w[1].val_auc));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (tr, va) = data(0.0);
        let cfg = TrainConfig { lr: 1e-2, batch_size: 32, seed: 5 };
        let mut a = MlpModel::build(&[16, 16], 4, Init::he(1)).unwrap();
        let mut b = a.clone();
        let ra = train_epochs(&mut a, &tr, &va, 5, cfg).unwrap();
        let rb = train_epochs(&mut b, &tr, &va, 5, cfg).unwrap();
        let la: Vec<f64> = ra.iter().map(|r| r.train_loss).collect();
        let lb: Vec<f64> = rb.iter().map(|r| r.train_loss).collect();
        assert_eq!(la, lb);
        assert!(ra.last().unwrap().val_auc > 0.8);
    }

    #[test]
    fn warm_start_matches_single_run() {
        let (tr, va) = data(0.1);
        let cfg = TrainConfig { lr: 5e-3, batch_size: 50, seed: 9 };
        let init = MlpModel::build(&[8, 8], 4, Init::he(2)).unwrap();
        let mut whole = init.clone();
        train_epochs(&mut whole, &tr, &va, 5, cfg).unwrap();
        let mut parts = init;
        let sched = |start| Schedule { start_epoch: start, horizon: 5 };
        train_epochs_with(&mut parts, &tr, &va, 2, cfg, sched(0)).unwrap();
        train_epochs_with(&mut parts, &tr, &va, 3, cfg, sched(2)).unwrap();
        assert_eq!(whole, parts);
    }

    #[test]
    fn cosine_endpoints() {
        let s = Schedule { start_epoch: 0, horizon: 4 };
        assert_eq!(s.lr_at(1.0, 0), 1.0);
        assert!((s.lr_at(1.0, 2) - 0.5).abs() < 1e-15);
        assert!(s.lr_at(1.0, 4).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_reported() {
        let (tr, va) = data(0.0);
        let mut m = MlpModel::build(&[4], 4, Init::he(1)).unwrap();
        m.weights[1].map_inplace(|_| f64::NAN);
        let r = train_epochs(&mut m, &tr, &va, 1, TrainConfig::default());
        assert!(r.is_err());
    }
}
