//! Forecast models: the benchmark systems, their parameterized variants, a
//! residual network correction and the integrators that define the flow
//! between observation times.

mod cw;
mod glv;
mod lorenz96;
mod model;
mod ode;
mod residual;

pub use cw::{cw_matrix, cw_matrix_values, cw_transition, matrix_exp, matrix_exp_values, CW_DT, CW_RATE, CW_X0};
pub use glv::{
    block_core, block_pairs, build_block_a, glv_rate_from_steady_state, glv_rhs, glv_rhs_values, group_indicator,
    true_block_params, GLV_BLOCKS, GLV_PARAMS,
};
pub use lorenz96::{
    l96_poly_rhs, l96_poly_rhs_values, lorenz96_rhs, lorenz96_rhs_values, poly_basis, sample_imperfect_l96,
    true_poly_coefficients, L96_DT, L96_FORCING, POLY_TERMS,
};
pub use model::{
    rollout, step_values, CwModel, ForecastModel, GlvModel, LinearModel, Lorenz96Model, PolyL96Model, Prepared,
};
pub use ode::rk4_step;
pub use residual::ResidualNet;
