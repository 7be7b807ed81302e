//! The generic filter step `x_a = f + K (y~ - H f)`, its gain families, and
//! the exact Kalman filter used as a linear-Gaussian reference.

mod gain;
mod kalman;
mod step;

pub use gain::{
    direct_gain, enkf_cov, ens3dvar_cov, ensemble_stats, gaspari_cohn, gaspari_cohn_weight, kalman_gain, GainFamily,
    GainSpec, BACKGROUND, GAIN, INFLATION, MIXING, NOISE,
};
pub use kalman::{kalman_filter, KalmanOutput};
pub use step::{forecast_ensemble, perturb_observations, BoundFilter, ForecastStats, Observation, StepOutput};
