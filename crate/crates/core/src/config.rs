//! Experiment configuration: flat JSON keys, per-system defaults, validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::GainFamily;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    Cw,
    L96,
    Glv,
}

impl System {
    pub fn label(self) -> &'static str {
        match self {
            System::Cw => "cw",
            System::L96 => "l96",
            System::Glv => "glv",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cw" => Ok(System::Cw),
            "l96" => Ok(System::L96),
            "glv" => Ok(System::Glv),
            _ => Err(Error::validation("system", format!("unknown system `{s}` (cw, l96, glv)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObsMode {
    /// Same evenly spaced rows at every step.
    Static,
    /// Fresh random rows at every step.
    TimeVarying,
    /// Clohessy-Wiltshire positions only, `H = [I_3 0]`.
    Positions,
}

impl FromStr for ObsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(ObsMode::Static),
            "time-varying" => Ok(ObsMode::TimeVarying),
            "positions" => Ok(ObsMode::Positions),
            _ => Err(Error::validation("obs_mode", format!("unknown mode `{s}` (static, time-varying, positions)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: System,
    pub method: GainFamily,
    pub dim: usize,
    pub ratio: f64,
    pub obs_mode: ObsMode,
    /// Spread of the initial forecast-model parameters around the truth.
    pub sigma0_sq: f64,
    /// Diagonal of `R` assumed by the filter.
    pub r_scale: f64,
    /// Diagonal of the noise actually added to the data; `r_scale` if unset.
    pub data_noise: Option<f64>,
    #[serde(alias = "T")]
    pub steps: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub ensemble_size: usize,
    pub window: usize,
    pub epochs: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    /// `(lr_theta, lr_phi)` candidates picked by validation loss; empty means
    /// use the two rates above.
    pub lr_grid: Vec<(f64, f64)>,
    pub patience: usize,
    pub taper_radius: Option<f64>,
    pub lowrank_p: Option<usize>,
    /// Initial-ensemble variance; the system default when unset.
    pub init_var: Option<f64>,
    /// Centre the initial ensemble on the true initial state.
    pub init_at_truth: bool,
    /// Start the forecast model at the true parameters.
    pub perfect_init: bool,
    pub inflation: f64,
    pub mixing: f64,
    /// Initial diagonal of `Q`; the system default when unset.
    pub forecast_noise: Option<f64>,
    pub residual_net: bool,
    pub net_channels: usize,
    pub net_kernel: usize,
    /// Attractor states used by the forecast RMSE.
    pub forecast_points: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::for_system(System::Cw)
    }
}

impl ExperimentConfig {
    pub fn for_system(system: System) -> Self {
        let mut c = ExperimentConfig {
            system,
            method: GainFamily::EnKF,
            dim: 6,
            ratio: 0.5,
            obs_mode: ObsMode::Positions,
            sigma0_sq: 0.03,
            r_scale: 0.1,
            data_noise: None,
            steps: 800,
            n_train: 8,
            n_val: 4,
            n_test: 4,
            ensemble_size: 25,
            window: 20,
            epochs: 40,
            lr_theta: 1e-2,
            lr_phi: 1e-2,
            lr_grid: Vec::new(),
            patience: 5,
            taper_radius: None,
            lowrank_p: None,
            init_var: None,
            init_at_truth: false,
            perfect_init: false,
            inflation: 0.1,
            mixing: 0.5,
            forecast_noise: None,
            residual_net: false,
            net_channels: 32,
            net_kernel: 5,
            forecast_points: 500,
            seed: 0,
            output_dir: PathBuf::from("out"),
        };
        match system {
            System::Cw => {}
            System::L96 => {
                c.dim = 40;
                c.ratio = 1.0;
                c.obs_mode = ObsMode::Static;
                c.sigma0_sq = 1.0;
                c.r_scale = 1.0;
                c.steps = 1200;
                c.taper_radius = Some(5.0);
                c.residual_net = true;
                c.lr_theta = 1e-3;
            }
            System::Glv => {
                c.dim = 100;
                c.obs_mode = ObsMode::TimeVarying;
                c.sigma0_sq = 0.1;
                c.r_scale = 0.05;
                c.steps = 200;
                c.lr_theta = 1e-3;
            }
        }
        c
    }

    /// Reads a JSON config; keys absent from the file take the defaults of
    /// the file's `system` (or `cw`).
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let system = match value.get("system") {
            Some(s) => serde_json::from_value(s.clone())?,
            None => System::Cw,
        };
        let mut base = serde_json::to_value(ExperimentConfig::for_system(system))?;
        if let (Some(b), Some(o)) = (base.as_object_mut(), value.as_object()) {
            for (k, v) in o {
                let k = if k == "T" { "steps" } else { k.as_str() };
                b.insert(k.to_string(), v.clone());
            }
        }
        Ok(serde_json::from_value(base)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn data_noise(&self) -> f64 {
        self.data_noise.unwrap_or(self.r_scale)
    }

    /// Initial-ensemble variance `C~_0`.
    pub fn init_var(&self) -> f64 {
        self.init_var.unwrap_or(match self.system {
            System::Cw => 5.0,
            System::L96 => 25.0,
            System::Glv => 1.0,
        })
    }

    pub fn forecast_noise(&self) -> f64 {
        self.forecast_noise.unwrap_or(match self.system {
            System::L96 => 2.0,
            _ => 0.1,
        })
    }

    /// Ensemble size actually used: 1 for the 3DVar families.
    pub fn members(&self) -> usize {
        if self.method.is_ensemble() {
            self.ensemble_size
        } else {
            1
        }
    }

    /// Number of observed components per step.
    pub fn obs_dim(&self) -> usize {
        match self.obs_mode {
            ObsMode::Positions => 3,
            ObsMode::TimeVarying => (self.ratio * self.dim as f64).round() as usize,
            ObsMode::Static => crate::datagen::systematic_indices(self.dim, self.ratio).len(),
        }
    }

    /// Checks every field and every cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, msg: String| Err(Error::validation(field, msg));
        match self.system {
            System::Cw if self.dim != 6 => return bad("dim", format!("cw has 6 state components, got {}", self.dim)),
            System::L96 if self.dim < 4 => {
                return Err(Error::DimTooSmall { dim: self.dim, min: 4 });
            }
            System::Glv if self.dim == 0 || !self.dim.is_multiple_of(4) => {
                return bad("dim", format!("glv needs a positive multiple of 4 species, got {}", self.dim));
            }
            _ => {}
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            if self.ratio == 0.0 {
                return Err(Error::EmptyObservation { ratio: self.ratio, dim: self.dim });
            }
            return bad("ratio", format!("must lie in (0, 1], got {}", self.ratio));
        }
        if self.obs_mode == ObsMode::Positions && self.system != System::Cw {
            return bad("obs_mode", "`positions` applies to the cw system only".into());
        }
        if self.obs_dim() == 0 {
            return Err(Error::EmptyObservation { ratio: self.ratio, dim: self.dim });
        }
        if self.method == GainFamily::ThreeDVarK && self.obs_mode == ObsMode::TimeVarying {
            return bad(
                "method/obs_mode",
                "ad3dvar-k learns a fixed gain and cannot be combined with time-varying observations".into(),
            );
        }
        if self.method.is_ensemble() && self.ensemble_size < 2 {
            return bad(
                "ensemble_size",
                format!("ensemble methods need at least 2 members, got {}", self.ensemble_size),
            );
        }
        if self.window == 0 {
            return bad("window", "subsequence length must be at least 1".into());
        }
        if self.n_train == 0 {
            return bad("n_train", "need at least one training trajectory".into());
        }
        for (field, v) in [("lr_theta", self.lr_theta), ("lr_phi", self.lr_phi)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(field, format!("learning rate must be finite and non-negative, got {v}"));
            }
        }
        if self.lr_grid.iter().any(|&(a, b)| !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite())) {
            return bad("lr_grid", "learning rates must be finite and non-negative".into());
        }
        if !(self.sigma0_sq >= 0.0) {
            return bad("sigma0_sq", format!("variance must be non-negative, got {}", self.sigma0_sq));
        }
        if !(self.r_scale > 0.0) {
            return bad("r_scale", format!("observation variance must be positive, got {}", self.r_scale));
        }
        if !(self.data_noise() >= 0.0) {
            return bad("data_noise", format!("variance must be non-negative, got {}", self.data_noise()));
        }
        if !(self.init_var() >= 0.0) {
            return bad("init_var", "variance must be non-negative".into());
        }
        if !(self.forecast_noise() > 0.0) {
            return bad("forecast_noise", "variance must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.inflation) || !(0.0..=1.0).contains(&self.mixing) {
            return bad("inflation/mixing", "must lie in [0, 1]".into());
        }
        if let Some(c) = self.taper_radius {
            if !(c > 0.0) {
                return bad("taper_radius", format!("radius must be positive, got {c}"));
            }
        }
        if let Some(p) = self.lowrank_p {
            if p == 0 || p > self.dim {
                return bad("lowrank_p", format!("rank must lie in 1..={}, got {p}", self.dim));
            }
            if self.method != GainFamily::ThreeDVarC {
                return bad(
                    "lowrank_p/method",
                    format!("low-rank background applies to ad3dvar-c, not {}", self.method),
                );
            }
        }
        if self.residual_net {
            if self.system != System::L96 {
                return bad("residual_net", "the residual network is defined for l96 only".into());
            }
            if self.net_kernel.is_multiple_of(2) || self.net_channels == 0 {
                return bad("net_kernel", "kernel width must be odd and channels positive".into());
            }
        }
        if self.forecast_points == 0 {
            return bad("forecast_points", "need at least one attractor state".into());
        }
        Ok(())
    }
}
