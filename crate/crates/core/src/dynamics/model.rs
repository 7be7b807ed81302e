use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::learning::{ParamSpec, Transform};
use crate::matrix::Matrix;

use super::cw::{cw_matrix, matrix_exp, CW_DT};
use super::glv::{block_core, group_indicator, GLV_PARAMS};
use super::lorenz96::{l96_poly_rhs, lorenz96_rhs, L96_DT, L96_FORCING, POLY_TERMS};
use super::ode::rk4_step;
use super::residual::ResidualNet;

/// Parameter-dependent nodes recorded once per tape and reused by every
/// forecast on it.
#[derive(Clone, Debug, Default)]
pub struct Prepared(pub Vec<Var>);

/// A forecast map `F_theta` applied column-wise to a `d x N` ensemble.
pub trait ForecastModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn dt(&self) -> f64;

    /// Learnable dynamics parameters with their constrained shapes.
    fn param_specs(&self) -> Vec<ParamSpec>;

    /// `params` are the constrained nodes, in [`Self::param_specs`] order.
    fn prepare(&self, tape: &mut Tape, params: &[Var]) -> Result<Prepared>;

    fn forecast(&self, tape: &mut Tape, prepared: &Prepared, ens: Var) -> Result<Var>;

    /// States are abundances; stochastic perturbations are folded back with `abs`.
    fn nonnegative(&self) -> bool {
        false
    }

    /// Transition matrix when the flow is linear, for the Kalman oracle.
    fn linear_transition(&self, _params: &[Matrix]) -> Option<Result<Matrix>> {
        None
    }
}

fn check_params(model: &dyn ForecastModel, params: &[Var], tape: &Tape) -> Result<()> {
    let specs = model.param_specs();
    if specs.len() != params.len() {
        return Err(Error::Dim(format!("{} expects {} parameters, got {}", model.name(), specs.len(), params.len())));
    }
    for (s, &p) in specs.iter().zip(params) {
        if tape.shape(p) != (s.rows, s.cols) {
            let (r, c) = tape.shape(p);
            return Err(Error::Dim(format!("{}: expected {}x{}, got {r}x{c}", s.name, s.rows, s.cols)));
        }
    }
    Ok(())
}

/// Forecast with fixed parameter values on a throwaway tape.
pub fn step_values(model: &dyn ForecastModel, params: &[Matrix], x: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let prep = model.prepare(&mut tape, &vars)?;
    let xv = tape.constant(x.clone());
    let out = model.forecast(&mut tape, &prep, xv)?;
    Ok(tape.value(out).clone())
}

/// States `x_0 .. x_steps` of the deterministic flow.
pub fn rollout(model: &dyn ForecastModel, params: &[Matrix], x0: &Matrix, steps: usize) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0.clone());
    for _ in 0..steps {
        let next = step_values(model, params, out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(out)
}

/// Clohessy-Wiltshire relative orbital motion; exact linear flow over `dt`.
#[derive(Clone, Debug)]
pub struct CwModel {
    pub dt: f64,
}

impl Default for CwModel {
    fn default() -> Self {
        CwModel { dt: CW_DT }
    }
}

impl ForecastModel for CwModel {
    fn name(&self) -> &'static str {
        "cw"
    }

    fn state_dim(&self) -> usize {
        6
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::new("cw_rate", 1, 1, Transform::Softplus)]
    }

    fn prepare(&self, tape: &mut Tape, params: &[Var]) -> Result<Prepared> {
        check_params(self, params, tape)?;
        let f = cw_matrix(tape, params[0])?;
        Ok(Prepared(vec![matrix_exp(tape, f, self.dt)?]))
    }

    fn forecast(&self, tape: &mut Tape, prepared: &Prepared, ens: Var) -> Result<Var> {
        tape.matmul(prepared.0[0], ens)
    }

    fn linear_transition(&self, params: &[Matrix]) -> Option<Result<Matrix>> {
        Some(super::cw::cw_transition(params[0].item(), self.dt))
    }
}

/// Lorenz-96 with forcing 8 and no learnable parameters.
#[derive(Clone, Debug)]
pub struct Lorenz96Model {
    pub dim: usize,
    pub forcing: f64,
    pub dt: f64,
}

impl Lorenz96Model {
    pub fn new(dim: usize) -> Self {
        Lorenz96Model { dim, forcing: L96_FORCING, dt: L96_DT }
    }
}

impl ForecastModel for Lorenz96Model {
    fn name(&self) -> &'static str {
        "l96"
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        Vec::new()
    }

    fn prepare(&self, _tape: &mut Tape, _params: &[Var]) -> Result<Prepared> {
        Ok(Prepared::default())
    }

    fn forecast(&self, tape: &mut Tape, _prepared: &Prepared, ens: Var) -> Result<Var> {
        let f = self.forcing;
        rk4_step(tape, ens, self.dt, |t, x| lorenz96_rhs(t, x, f))
    }
}

/// Fixed (possibly imperfect) polynomial Lorenz-96 flow `F_0` plus an optional
/// learnable residual network: `F(x) = F_0(x) + G(x)`.
#[derive(Clone, Debug)]
pub struct PolyL96Model {
    pub dim: usize,
    pub beta: Vec<f64>,
    pub dt: f64,
    pub residual: Option<ResidualNet>,
}

impl PolyL96Model {
    pub fn new(dim: usize, beta: Vec<f64>, residual: Option<ResidualNet>) -> Result<Self> {
        if beta.len() != POLY_TERMS {
            return Err(Error::Dim(format!("expected {POLY_TERMS} coefficients, got {}", beta.len())));
        }
        Ok(PolyL96Model { dim, beta, dt: L96_DT, residual })
    }
}

impl ForecastModel for PolyL96Model {
    fn name(&self) -> &'static str {
        "l96"
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        self.residual.as_ref().map(|r| r.param_specs()).unwrap_or_default()
    }

    fn prepare(&self, tape: &mut Tape, params: &[Var]) -> Result<Prepared> {
        check_params(self, params, tape)?;
        let beta = tape.constant(Matrix::column(&self.beta));
        let mut vars = vec![beta];
        vars.extend_from_slice(params);
        Ok(Prepared(vars))
    }

    fn forecast(&self, tape: &mut Tape, prepared: &Prepared, ens: Var) -> Result<Var> {
        let beta = prepared.0[0];
        let base = rk4_step(tape, ens, self.dt, |t, x| l96_poly_rhs(t, x, beta))?;
        match &self.residual {
            None => Ok(base),
            Some(net) => {
                let g = net.forward(tape, &prepared.0[1..], ens)?;
                let out = tape.add(base, g)?;
                if tape.value(out).is_finite() {
                    Ok(out)
                } else {
                    Err(Error::BlowUp { context: "residual forecast" })
                }
            }
        }
    }
}

/// Generalized Lotka-Volterra with block interactions and rates from a
/// learnable steady state, `r = -A x_s`.
#[derive(Clone, Debug)]
pub struct GlvModel {
    pub dim: usize,
    pub dt: f64,
}

impl GlvModel {
    pub fn new(dim: usize) -> Result<Self> {
        group_indicator(dim)?;
        Ok(GlvModel { dim, dt: L96_DT })
    }
}

impl ForecastModel for GlvModel {
    fn name(&self) -> &'static str {
        "glv"
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new("glv_a", GLV_PARAMS, 1, Transform::Identity),
            ParamSpec::new("glv_xs", self.dim, 1, Transform::Identity),
        ]
    }

    fn prepare(&self, tape: &mut Tape, params: &[Var]) -> Result<Prepared> {
        check_params(self, params, tape)?;
        let core = block_core(tape, params[0])?;
        let e = group_indicator(self.dim)?;
        let et = tape.constant(e.transpose());
        let e = tape.constant(e);
        // A x = E core E^T x without forming the d x d matrix
        let g = tape.matmul(et, params[1])?;
        let g = tape.matmul(core, g)?;
        let ax = tape.matmul(e, g)?;
        let r = tape.negate(ax)?;
        Ok(Prepared(vec![core, e, et, r]))
    }

    fn forecast(&self, tape: &mut Tape, prepared: &Prepared, ens: Var) -> Result<Var> {
        let [core, e, et, r] = prepared.0[..] else {
            return Err(Error::Dim("unprepared GLV model".into()));
        };
        let n = tape.shape(ens).1;
        let rb = tape.broadcast_cols(r, n)?;
        rk4_step(tape, ens, self.dt, |t, x| {
            let g = t.matmul(et, x)?;
            let g = t.matmul(core, g)?;
            let ax = t.matmul(e, g)?;
            let f = t.add(rb, ax)?;
            t.hadamard(x, f)
        })
    }

    fn nonnegative(&self) -> bool {
        true
    }
}

/// `x -> M x` with a learnable `d x d` matrix; a toy linear system.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub dim: usize,
}

impl ForecastModel for LinearModel {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn state_dim(&self) -> usize {
        self.dim
    }

    fn dt(&self) -> f64 {
        1.0
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::new("lin_m", self.dim, self.dim, Transform::Identity)]
    }

    fn prepare(&self, tape: &mut Tape, params: &[Var]) -> Result<Prepared> {
        check_params(self, params, tape)?;
        Ok(Prepared(params.to_vec()))
    }

    fn forecast(&self, tape: &mut Tape, prepared: &Prepared, ens: Var) -> Result<Var> {
        tape.matmul(prepared.0[0], ens)
    }

    fn linear_transition(&self, params: &[Matrix]) -> Option<Result<Matrix>> {
        Some(Ok(params[0].clone()))
    }
}
