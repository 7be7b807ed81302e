use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::learning::{Group, ParamSpec, Transform};
use crate::matrix::Matrix;

pub const BACKGROUND: &str = "bg_b";
pub const GAIN: &str = "gain_k";
pub const INFLATION: &str = "infl";
pub const MIXING: &str = "mix";
pub const NOISE: &str = "noise_q";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GainFamily {
    /// Static background covariance `C = B B^T`.
    #[serde(rename = "ad3dvar-c")]
    ThreeDVarC,
    /// Directly parameterized gain.
    #[serde(rename = "ad3dvar-k")]
    ThreeDVarK,
    /// Stochastic EnKF with learned inflation.
    #[serde(rename = "adenkf")]
    EnKF,
    /// Convex mix of static and ensemble covariances.
    #[serde(rename = "adens3dvar")]
    Ens3DVar,
}

impl GainFamily {
    pub const ALL: [GainFamily; 4] =
        [GainFamily::ThreeDVarC, GainFamily::ThreeDVarK, GainFamily::EnKF, GainFamily::Ens3DVar];

    pub fn is_ensemble(self) -> bool {
        matches!(self, GainFamily::EnKF | GainFamily::Ens3DVar)
    }

    pub fn label(self) -> &'static str {
        match self {
            GainFamily::ThreeDVarC => "ad3dvar-c",
            GainFamily::ThreeDVarK => "ad3dvar-k",
            GainFamily::EnKF => "adenkf",
            GainFamily::Ens3DVar => "adens3dvar",
        }
    }
}

impl fmt::Display for GainFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GainFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GainFamily::ALL
            .into_iter()
            .find(|g| g.label() == s)
            .ok_or_else(|| Error::validation("method", format!("unknown method `{s}`")))
    }
}

/// Gain family plus the fixed (non-learned) choices that go with it.
#[derive(Clone, Debug)]
pub struct GainSpec {
    pub family: GainFamily,
    pub ensemble_size: usize,
    /// Elementwise localization of the ensemble covariance.
    pub taper: Option<Matrix>,
    /// Add forecast-noise perturbations `s = 1`.
    pub perturb: bool,
    /// Rank `p` of the background factor; `C = C_0 + B B^T` when set.
    pub lowrank: Option<usize>,
    /// `C_0` of the low-rank form; identity when absent.
    pub lowrank_base: Option<Matrix>,
}

impl GainSpec {
    pub fn new(family: GainFamily, ensemble_size: usize) -> Self {
        GainSpec {
            family,
            ensemble_size: if family.is_ensemble() { ensemble_size } else { 1 },
            taper: None,
            perturb: family.is_ensemble(),
            lowrank: None,
            lowrank_base: None,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.family.is_ensemble() {
            if self.ensemble_size < 2 {
                return Err(Error::EnsembleTooSmall(self.ensemble_size));
            }
        } else if self.ensemble_size != 1 || self.perturb {
            return Err(Error::validation("ensemble_size", "3DVar families use a single member and no perturbation"));
        }
        if let Some(t) = &self.taper {
            if t.shape() != (d, d) {
                return Err(Error::Dim(format!("taper must be {d}x{d}")));
            }
        }
        if let Some(p) = self.lowrank {
            if p == 0 || p > d {
                return Err(Error::validation("lowrank_p", format!("rank must be in 1..={d}")));
            }
            if self.family != GainFamily::ThreeDVarC {
                return Err(Error::validation("lowrank_p", "low-rank background only applies to ad3dvar-c"));
            }
        }
        Ok(())
    }

    /// Learnable filter-side parameters. `static_dy` is the observation count
    /// when the operator is time-invariant.
    pub fn param_specs(&self, d: usize, static_dy: Option<usize>) -> Result<Vec<(ParamSpec, Group)>> {
        let b_cols = self.lowrank.unwrap_or(d);
        let noise = (ParamSpec::new(NOISE, d, 1, Transform::Softplus), Group::Noise);
        let background = (ParamSpec::new(BACKGROUND, d, b_cols, Transform::Identity), Group::Filter);
        Ok(match self.family {
            GainFamily::ThreeDVarC => vec![background],
            GainFamily::ThreeDVarK => {
                let dy = static_dy.ok_or(Error::StaticObservationRequired)?;
                vec![(ParamSpec::new(GAIN, d, dy, Transform::Identity), Group::Filter)]
            }
            GainFamily::EnKF => vec![(ParamSpec::new(INFLATION, 1, 1, Transform::Sigmoid), Group::Filter), noise],
            GainFamily::Ens3DVar => {
                vec![(ParamSpec::new(MIXING, 1, 1, Transform::Sigmoid), Group::Filter), background, noise]
            }
        })
    }
}

/// Ensemble mean `d x 1` and unbiased covariance of the columns of `f`.
pub fn ensemble_stats(f: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = f.cols();
    if n < 2 {
        return Err(Error::EnsembleTooSmall(n));
    }
    let mean = f.row_means();
    let anom = Matrix::from_fn(f.rows(), n, |i, j| f.get(i, j) - mean.get(i, 0));
    let cov = anom.matmul(&anom.transpose()).scale(1.0 / (n - 1) as f64);
    Ok((mean, cov))
}

/// Fifth-order piecewise rational compactly supported correlation at `z = r / c`.
pub fn gaspari_cohn_weight(z: f64) -> f64 {
    let z = z.abs();
    if z <= 1.0 {
        -0.25 * z.powi(5) + 0.5 * z.powi(4) + 0.625 * z.powi(3) - 5.0 / 3.0 * z * z + 1.0
    } else if z < 2.0 {
        z.powi(5) / 12.0 - 0.5 * z.powi(4) + 0.625 * z.powi(3) + 5.0 / 3.0 * z * z - 5.0 * z + 4.0 - 2.0 / (3.0 * z)
    } else {
        0.0
    }
}

/// Taper on a ring of `d` sites with radius `c`.
pub fn gaspari_cohn(d: usize, c: f64) -> Result<Matrix> {
    if !(c > 0.0) {
        return Err(Error::validation("taper_radius", "radius must be positive"));
    }
    Ok(Matrix::from_fn(d, d, |i, j| {
        let r = i.abs_diff(j);
        let r = r.min(d - r);
        gaspari_cohn_weight(r as f64 / c)
    }))
}

fn tapered(tape: &mut Tape, c_hat: Var, taper: Option<Var>) -> Result<Var> {
    match taper {
        Some(rho) => tape.hadamard(rho, c_hat),
        None => Ok(c_hat),
    }
}

/// `(1 + alpha) (rho o C_hat)` with constrained inflation `alpha` (`1 x 1`).
pub fn enkf_cov(tape: &mut Tape, c_hat: Var, alpha: Var, taper: Option<Var>) -> Result<Var> {
    let c = tapered(tape, c_hat, taper)?;
    let grown = tape.mul_scalar(c, alpha)?;
    tape.add(c, grown)
}

/// `(1 - gamma) C_static + gamma (rho o C_hat)`.
pub fn ens3dvar_cov(tape: &mut Tape, c_hat: Var, gamma: Var, c_static: Var, taper: Option<Var>) -> Result<Var> {
    let c = tapered(tape, c_hat, taper)?;
    let ens = tape.mul_scalar(c, gamma)?;
    let stat = tape.mul_scalar(c_static, gamma)?;
    let stat = tape.sub(c_static, stat)?;
    tape.add(stat, ens)
}

/// `K = C H^T S^{-1}` and `S = sym(H C H^T) + R` for a row-selection `H`.
pub fn kalman_gain(tape: &mut Tape, c: Var, idx: &[usize], r: Var) -> Result<(Var, Var)> {
    let hc = tape.gather_rows(c, idx.to_vec())?;
    let cht = tape.transpose(hc)?;
    let hcht = tape.gather_rows(cht, idx.to_vec())?;
    let hcht = tape.symmetrize(hcht)?;
    let s = tape.add(hcht, r)?;
    let kt = tape.cholesky_solve_psd(s, hc)?;
    let k = tape.transpose(kt)?;
    Ok((k, s))
}

/// A learned gain used as-is; only valid when `H` does not change over time.
pub fn direct_gain(k: Var, static_observations: bool) -> Result<Var> {
    if static_observations {
        Ok(k)
    } else {
        Err(Error::StaticObservationRequired)
    }
}
