use std::path::{Path, PathBuf};

use adfilter_core::config::ExperimentConfig;
use adfilter_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(name = "adfilter", version, about = "Auto-differentiable filtering experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Simulate truth trajectories and observations into `<output-dir>/data`.
    Generate(RunArgs),
    /// Train on a generated dataset; writes checkpoint.json and curves.csv.
    Train(RunArgs),
    /// Filter the test split with a checkpoint; writes report.json and traces.
    Evaluate(EvaluateArgs),
    /// Exact Kalman filter reference on the test split (linear systems only).
    Oracle(RunArgs),
    /// Adjoint gradients against central differences for every filter family.
    Gradcheck(GradcheckArgs),
    /// Filter quality over a grid of taper radii and inflations.
    Tapergrid(TapergridArgs),
}

/// Configuration sources, in increasing precedence: the dataset's own
/// configuration (where there is one), `--config`, `ADFILTER_SEED`, flags.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// JSON file with flat configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Echo the fully resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Parallel jobs over seeds or grid cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Run once per seed, each in `<output-dir>/seed_<s>`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,

    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, alias = "d-x")]
    pub dim: Option<usize>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub obs_mode: Option<String>,
    #[arg(long)]
    pub sigma0_sq: Option<f64>,
    #[arg(long)]
    pub r_scale: Option<f64>,
    #[arg(long)]
    pub data_noise: Option<f64>,
    /// Trajectory length.
    #[arg(long = "T", alias = "steps")]
    pub steps: Option<usize>,
    /// Ensemble size.
    #[arg(long = "N", alias = "ensemble-size")]
    pub ensemble_size: Option<usize>,
    /// Truncated-backpropagation window.
    #[arg(long = "L", alias = "window")]
    pub window: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr_theta: Option<f64>,
    #[arg(long)]
    pub lr_phi: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub taper_radius: Option<f64>,
    #[arg(long)]
    pub lowrank_p: Option<usize>,
    #[arg(long)]
    pub inflation: Option<f64>,
    #[arg(long)]
    pub mixing: Option<f64>,
    #[arg(long)]
    pub init_var: Option<f64>,
    #[arg(long)]
    pub forecast_noise: Option<f64>,
    #[arg(long)]
    pub perfect_init: bool,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub forecast_points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Args, Clone, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Defaults to `<output-dir>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Filter steps per check (at most 5).
    #[arg(long = "T", default_value_t = 5)]
    pub steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Perturb the adjoints to exercise the failure path.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Args, Clone, Debug)]
pub struct TapergridArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub radii: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub inflations: Vec<f64>,
}

fn read_object(path: &Path) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })
}

impl ConfigArgs {
    fn flag_values(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("output_dir", self.output_dir.as_ref().map(|p| Value::from(p.display().to_string())));
        put("system", self.system.clone().map(Value::from));
        put("method", self.method.clone().map(Value::from));
        put("dim", self.dim.map(Value::from));
        put("ratio", self.ratio.map(Value::from));
        put("obs_mode", self.obs_mode.clone().map(Value::from));
        put("sigma0_sq", self.sigma0_sq.map(Value::from));
        put("r_scale", self.r_scale.map(Value::from));
        put("data_noise", self.data_noise.map(Value::from));
        put("steps", self.steps.map(Value::from));
        put("ensemble_size", self.ensemble_size.map(Value::from));
        put("window", self.window.map(Value::from));
        put("epochs", self.epochs.map(Value::from));
        put("lr_theta", self.lr_theta.map(Value::from));
        put("lr_phi", self.lr_phi.map(Value::from));
        put("patience", self.patience.map(Value::from));
        put("taper_radius", self.taper_radius.map(Value::from));
        put("lowrank_p", self.lowrank_p.map(Value::from));
        put("inflation", self.inflation.map(Value::from));
        put("mixing", self.mixing.map(Value::from));
        put("init_var", self.init_var.map(Value::from));
        put("forecast_noise", self.forecast_noise.map(Value::from));
        put("perfect_init", self.perfect_init.then_some(Value::from(true)));
        put("n_train", self.n_train.map(Value::from));
        put("n_val", self.n_val.map(Value::from));
        put("n_test", self.n_test.map(Value::from));
        put("forecast_points", self.forecast_points.map(Value::from));
        put("seed", self.seed.map(Value::from));
        m
    }

    /// Merges every source over `base` and validates the result. A source
    /// naming a different system discards `base` altogether.
    pub fn resolve(&self, base: Option<&ExperimentConfig>) -> Result<ExperimentConfig> {
        let mut overlay = Map::new();
        let mut source = "<flags>".to_string();
        if let Some(path) = &self.config {
            let mut file = read_object(path)?;
            if let Some(t) = file.remove("T") {
                file.insert("steps".into(), t);
            }
            overlay.extend(file);
            source = path.display().to_string();
        }
        if let Ok(s) = std::env::var("ADFILTER_SEED") {
            let seed: u64 =
                s.trim().parse().map_err(|_| Error::validation("ADFILTER_SEED", format!("not a seed: `{s}`")))?;
            overlay.insert("seed".into(), Value::from(seed));
        }
        overlay.extend(self.flag_values());
        let mut merged = match base.map(serde_json::to_value).transpose()? {
            Some(Value::Object(m)) => m,
            _ => Map::new(),
        };
        if overlay.get("system").is_some_and(|s| Some(s) != merged.get("system")) {
            merged.clear();
        }
        merged.extend(overlay);
        let cfg = ExperimentConfig::from_json(&Value::Object(merged).to_string()).map_err(|e| match e {
            Error::Json(j) => Error::Parse { path: source, message: j.to_string() },
            e => e,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Output directory from the sources that exist before any dataset is read.
    pub fn output_dir(&self) -> Result<PathBuf> {
        if let Some(p) = &self.output_dir {
            return Ok(p.clone());
        }
        if let Some(path) = &self.config {
            if let Some(Value::String(s)) = read_object(path)?.get("output_dir") {
                return Ok(PathBuf::from(s));
            }
        }
        Ok(ExperimentConfig::default().output_dir)
    }

    /// `(seed, directory)` per job; `None` means the configured seed in the
    /// output directory itself.
    pub fn jobs(&self) -> Result<Vec<(Option<u64>, PathBuf)>> {
        let out = self.output_dir()?;
        if self.seeds.is_empty() {
            return Ok(vec![(None, out)]);
        }
        Ok(self.seeds.iter().map(|&s| (Some(s), out.join(format!("seed_{s}")))).collect())
    }
}
