use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dynamics::{ForecastModel, Prepared};
use crate::error::{Error, Result};
use crate::learning::BoundParams;
use crate::matrix::Matrix;
use crate::rng::{normal_matrix, standard_normal, Rng};

use super::gain::{
    direct_gain, enkf_cov, ens3dvar_cov, kalman_gain, GainFamily, GainSpec, BACKGROUND, GAIN, INFLATION, MIXING, NOISE,
};

/// Observation at one time: observed component indices (the rows kept by
/// `H_t`), values, and the diagonal of `R_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub noise_var: Vec<f64>,
}

impl Observation {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, noise_var: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() || values.len() != noise_var.len() {
            return Err(Error::Dim("observation indices, values and noise must have equal length".into()));
        }
        Ok(Observation { indices, values, noise_var })
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn r(&self) -> Matrix {
        Matrix::diag(&self.noise_var)
    }

    pub fn column(&self) -> Matrix {
        Matrix::column(&self.values)
    }
}

/// Quantities of one forecast that enter the loss.
#[derive(Clone, Copy, Debug)]
pub struct ForecastStats {
    /// Forecast ensemble, `d x N`.
    pub forecast: Var,
    /// Forecast mean, `d x 1`.
    pub mean: Var,
    /// Forecast covariance used by the gain (absent for 3DVar-K).
    pub cov: Option<Var>,
    /// Innovation covariance `H C H^T + R`; `R` itself for 3DVar-K.
    pub s: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub analysis: Var,
    pub stats: ForecastStats,
}

/// `F(x^n) + s Q~ xi^n`, with `|.|` applied afterwards for non-negative states.
pub fn forecast_ensemble(
    tape: &mut Tape,
    model: &dyn ForecastModel,
    prepared: &Prepared,
    ens: Var,
    noise_sd: Option<Var>,
    rng: &mut Rng,
) -> Result<Var> {
    let f = model.forecast(tape, prepared, ens)?;
    let Some(sd) = noise_sd else { return Ok(f) };
    let (d, n) = tape.shape(f);
    let xi = tape.constant(normal_matrix(rng, d, n));
    let sd = tape.broadcast_cols(sd, n)?;
    let noise = tape.hadamard(sd, xi)?;
    let f = tape.add(f, noise)?;
    if model.nonnegative() {
        tape.abs(f)
    } else {
        Ok(f)
    }
}

/// `N` copies of `y + gamma^n`, `gamma^n ~ N(0, R)`, as a `d_y x N` matrix.
pub fn perturb_observations(obs: &Observation, n: usize, rng: &mut Rng, nonnegative: bool) -> Matrix {
    let sd: Vec<f64> = obs.noise_var.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut out = Matrix::zeros(obs.dim(), n);
    for i in 0..obs.dim() {
        for j in 0..n {
            let v = obs.values[i] + sd[i] * standard_normal(rng);
            out.set(i, j, if nonnegative { v.abs() } else { v });
        }
    }
    out
}

/// A filter whose parameters are recorded on one tape; `step` may be called
/// repeatedly on that tape.
pub struct BoundFilter<'a> {
    pub model: &'a dyn ForecastModel,
    pub spec: &'a GainSpec,
    prepared: Prepared,
    static_cov: Option<Var>,
    gain: Option<Var>,
    inflation: Option<Var>,
    mixing: Option<Var>,
    noise_sd: Option<Var>,
    taper: Option<Var>,
}

impl<'a> BoundFilter<'a> {
    pub fn bind(
        tape: &mut Tape,
        model: &'a dyn ForecastModel,
        spec: &'a GainSpec,
        params: &BoundParams,
    ) -> Result<Self> {
        spec.validate(model.state_dim())?;
        let dyn_params = params.values_for(&model.param_specs())?;
        let prepared = model.prepare(tape, &dyn_params)?;
        let mut bf = BoundFilter {
            model,
            spec,
            prepared,
            static_cov: None,
            gain: None,
            inflation: None,
            mixing: None,
            noise_sd: None,
            taper: None,
        };
        let family = spec.family;
        if matches!(family, GainFamily::ThreeDVarC | GainFamily::Ens3DVar) {
            let b = params.value(BACKGROUND)?;
            let bt = tape.transpose(b)?;
            let mut c = tape.matmul(b, bt)?;
            if spec.lowrank.is_some() {
                let d = model.state_dim();
                let base = spec.lowrank_base.clone().unwrap_or_else(|| Matrix::identity(d));
                let base = tape.constant(base);
                c = tape.add(base, c)?;
            }
            bf.static_cov = Some(c);
        }
        match family {
            GainFamily::ThreeDVarK => bf.gain = Some(params.value(GAIN)?),
            GainFamily::EnKF => bf.inflation = Some(params.value(INFLATION)?),
            GainFamily::Ens3DVar => bf.mixing = Some(params.value(MIXING)?),
            GainFamily::ThreeDVarC => {}
        }
        if spec.perturb {
            let q = params.value(NOISE)?;
            bf.noise_sd = Some(tape.sqrt(q)?);
        }
        if family.is_ensemble() {
            bf.taper = spec.taper.clone().map(|t| tape.constant(t));
        }
        Ok(bf)
    }

    fn ensemble_cov(&self, tape: &mut Tape, f: Var, mean: Var) -> Result<Var> {
        let n = tape.shape(f).1;
        if n < 2 {
            return Err(Error::EnsembleTooSmall(n));
        }
        let m = tape.broadcast_cols(mean, n)?;
        let a = tape.sub(f, m)?;
        let at = tape.transpose(a)?;
        let c = tape.matmul(a, at)?;
        tape.scale(c, 1.0 / (n - 1) as f64)
    }

    /// Forecast, gain and analysis for one observation time.
    pub fn step(&self, tape: &mut Tape, ens: Var, obs: &Observation, rng: &mut Rng) -> Result<StepOutput> {
        let family = self.spec.family;
        let n = tape.shape(ens).1;
        let noise_sd = if self.spec.perturb { self.noise_sd } else { None };
        let f = forecast_ensemble(tape, self.model, &self.prepared, ens, noise_sd, rng)?;
        let mean = if n == 1 { f } else { tape.row_mean(f)? };
        let r = tape.constant(obs.r());

        let (k, cov, s) = match family {
            GainFamily::ThreeDVarK => {
                let k = direct_gain(self.gain.expect("bound gain"), tape.shape(self.gain.unwrap()).1 == obs.dim())?;
                (k, None, r)
            }
            _ => {
                let c = match family {
                    GainFamily::ThreeDVarC => self.static_cov.expect("bound background"),
                    GainFamily::EnKF => {
                        let ch = self.ensemble_cov(tape, f, mean)?;
                        enkf_cov(tape, ch, self.inflation.expect("bound inflation"), self.taper)?
                    }
                    GainFamily::Ens3DVar => {
                        let ch = self.ensemble_cov(tape, f, mean)?;
                        let (g, cs) = (self.mixing.expect("bound mixing"), self.static_cov.expect("bound background"));
                        ens3dvar_cov(tape, ch, g, cs, self.taper)?
                    }
                    GainFamily::ThreeDVarK => unreachable!(),
                };
                let (k, s) = kalman_gain(tape, c, &obs.indices, r)?;
                (k, Some(c), s)
            }
        };

        let y = if self.spec.perturb {
            perturb_observations(obs, n, rng, self.model.nonnegative())
        } else {
            Matrix::from_fn(obs.dim(), n, |i, _| obs.values[i])
        };
        let y = tape.constant(y);
        let hf = tape.gather_rows(f, obs.indices.clone())?;
        let innov = tape.sub(y, hf)?;
        let inc = tape.matmul(k, innov)?;
        let analysis = tape.add(f, inc)?;
        if !tape.value(analysis).is_finite() {
            return Err(Error::BlowUp { context: "analysis" });
        }
        Ok(StepOutput { analysis, stats: ForecastStats { forecast: f, mean, cov, s } })
    }
}
