//! Minimal MLP engine: `[linear → batch norm → ReLU] × L → linear` with a
//! single logit output, hand-derived gradients, Adam and ROC-AUC.

mod backprop;
mod metrics;
mod model;
mod train;

pub use backprop::{
    backward, backward_from, forward, forward_with, BnMode, ForwardTrace, GradientSet, LayerTrace,
    LossKind, ZeroVariance,
};
pub use metrics::{auc, bce_loss, sigmoid};
pub use model::{InitScheme, Init, MlpModel, ParamCount, BN_EPS};
pub use train::{evaluate, train_epochs, train_epochs_with, EpochRecord, Schedule, TrainConfig};
