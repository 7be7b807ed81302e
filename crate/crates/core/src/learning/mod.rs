//! Losses, truncated backpropagation through the filter, Adam with a plateau
//! scheduler, and latent parameter transforms.

mod loss;
mod optim;
mod params;
mod train;

pub use loss::{loss_3dvar_k, nll_loss};
pub use optim::{Adam, PlateauScheduler};
pub use params::{BoundParams, Group, Param, ParamSpec, ParameterSet, Transform};
pub use train::{
    select_rates, step_rng, tbptt_epoch, train, validation_loss, EpochRecord, EpochStats, FilterRun, Phase, Problem,
    Sequence, TrainResult, TrainSettings, WindowOutput, WindowReport,
};
