//! Twin-experiment data: truth rollouts, observation plans, noisy
//! observations, train/validation/test splits and their on-disk form.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::autodiff::softplus;
use crate::config::{ExperimentConfig, ObsMode, System};
use crate::dynamics::{
    build_block_a, rollout, true_block_params, CwModel, ForecastModel, GlvModel, Lorenz96Model, CW_RATE, CW_X0,
};
use crate::error::{Error, Result};
use crate::filters::Observation;
use crate::matrix::Matrix;
use crate::metrics::{csv_err, fmt};
use crate::rng::{key, normal_matrix, standard_normal, stream, Rng};

/// Integrator steps discarded before a Lorenz-96 truth is recorded.
pub const L96_SPINUP: usize = 500;

/// Evenly spaced rows: index `i` is kept iff `floor(i r) > floor((i - 1) r)`.
pub fn systematic_indices(d: usize, ratio: f64) -> Vec<usize> {
    (0..d).filter(|&i| (i as f64 * ratio).floor() > ((i as f64 - 1.0) * ratio).floor()).collect()
}

/// Observed rows for each step `t = 1..T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationPlan {
    pub mode: ObsMode,
    pub ratio: f64,
    pub indices: Vec<Vec<usize>>,
}

impl ObservationPlan {
    pub fn is_static(&self) -> bool {
        self.indices.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn make_plan(mode: ObsMode, d: usize, ratio: f64, steps: usize, rng: &mut Rng) -> Result<ObservationPlan> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        if ratio == 0.0 {
            return Err(Error::EmptyObservation { ratio, dim: d });
        }
        return Err(Error::validation("ratio", format!("must lie in (0, 1], got {ratio}")));
    }
    let indices = match mode {
        ObsMode::Positions => {
            if d < 3 {
                return Err(Error::DimTooSmall { dim: d, min: 3 });
            }
            vec![vec![0, 1, 2]; steps]
        }
        ObsMode::Static => {
            let idx = systematic_indices(d, ratio);
            if idx.is_empty() {
                return Err(Error::EmptyObservation { ratio, dim: d });
            }
            vec![idx; steps]
        }
        ObsMode::TimeVarying => {
            let k = (ratio * d as f64).round() as usize;
            if k == 0 {
                return Err(Error::EmptyObservation { ratio, dim: d });
            }
            (0..steps)
                .map(|_| {
                    let mut idx = sample(rng, d, k).into_vec();
                    idx.sort_unstable();
                    idx
                })
                .collect()
        }
    };
    Ok(ObservationPlan { mode, ratio, indices })
}

/// `y_t = x*_t[idx_t] + eta_t`, `eta_t ~ N(0, data_var I)`; the filter is told
/// `R_t = filter_var I`.
pub fn observe(
    truth: &[Matrix],
    plan: &ObservationPlan,
    data_var: f64,
    filter_var: f64,
    rng: &mut Rng,
) -> Result<Vec<Observation>> {
    if truth.len() != plan.indices.len() {
        return Err(Error::Dim(format!("{} states for a plan of {} steps", truth.len(), plan.indices.len())));
    }
    let sd = data_var.sqrt();
    truth
        .iter()
        .zip(&plan.indices)
        .map(|(x, idx)| {
            let values = idx.iter().map(|&i| x.get(i, 0) + sd * standard_normal(rng)).collect();
            Observation::new(idx.clone(), values, vec![filter_var; idx.len()])
        })
        .collect()
}

/// True forecast model and its parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub system: System,
    pub dim: usize,
    /// Parameter values in the forecast model's own order.
    pub params: Vec<Matrix>,
}

impl TruthSpec {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        let d = config.dim;
        let params = match config.system {
            System::Cw => vec![Matrix::scalar(CW_RATE)],
            System::L96 => Vec::new(),
            System::Glv => {
                let mut rng = stream(config.seed, &[key("glv-steady-state")]);
                let xs = normal_matrix(&mut rng, d, 1).map(softplus);
                vec![Matrix::column(&true_block_params()), xs]
            }
        };
        Ok(TruthSpec { system: config.system, dim: d, params })
    }

    pub fn model(&self) -> Result<Box<dyn ForecastModel>> {
        Ok(match self.system {
            System::Cw => Box::new(CwModel::default()),
            System::L96 => Box::new(Lorenz96Model::new(self.dim)),
            System::Glv => Box::new(GlvModel::new(self.dim)?),
        })
    }

    /// Dense interaction matrix and rates of the GLV truth.
    pub fn glv_parts(&self) -> Option<(Matrix, Matrix)> {
        if self.system != System::Glv {
            return None;
        }
        let a = build_block_a(self.params[0].data(), self.dim).ok()?;
        let r = a.matmul(&self.params[1]).scale(-1.0);
        Some((a, r))
    }

    /// A truth initial state: fixed for CW, on the attractor for L96, near the
    /// steady state for GLV.
    pub fn initial_state(&self, rng: &mut Rng) -> Result<Matrix> {
        Ok(match self.system {
            System::Cw => Matrix::column(&CW_X0),
            System::L96 => {
                let model = self.model()?;
                let x = normal_matrix(rng, self.dim, 1);
                rollout(model.as_ref(), &self.params, &x, L96_SPINUP)?.pop().expect("rollout state")
            }
            System::Glv => {
                let noise = normal_matrix(rng, self.dim, 1).scale(0.1);
                self.params[1].add(&noise).map(f64::abs)
            }
        })
    }

    pub fn simulate(&self, x0: &Matrix, steps: usize) -> Result<Vec<Matrix>> {
        let model = self.model()?;
        rollout(model.as_ref(), &self.params, x0, steps)
    }
}

/// One independent trajectory: `truth[0..=T]` and `obs[t-1]` for `t = 1..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub truth: Vec<Matrix>,
    pub obs: Vec<Observation>,
}

impl Trajectory {
    pub fn x0(&self) -> &Matrix {
        &self.truth[0]
    }

    pub fn steps(&self) -> usize {
        self.obs.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Sequence id of trajectory `i`, unique across splits.
    pub fn seq_id(self, i: usize) -> usize {
        let base = match self {
            Split::Train => 0,
            Split::Val => 10_000,
            Split::Test => 20_000,
        };
        base + i
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: ExperimentConfig,
    pub truth: TruthSpec,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Trajectory] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Generates one trajectory from its own stream `(seed, split, index)`.
pub fn build_trajectory(config: &ExperimentConfig, truth: &TruthSpec, split: Split, i: usize) -> Result<Trajectory> {
    let mut rng = stream(config.seed, &[key("trajectory"), key(split.label()), i as u64]);
    let x0 = truth.initial_state(&mut rng)?;
    let states = truth.simulate(&x0, config.steps)?;
    let plan = make_plan(config.obs_mode, config.dim, config.ratio, config.steps, &mut rng)?;
    let obs = observe(&states[1..], &plan, config.data_noise(), config.r_scale, &mut rng)?;
    Ok(Trajectory { truth: states, obs })
}

pub fn build_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    let truth = TruthSpec::new(config)?;
    let group = |s: Split, n: usize| (0..n).map(|i| build_trajectory(config, &truth, s, i)).collect::<Result<Vec<_>>>();
    Ok(Dataset {
        train: group(Split::Train, config.n_train)?,
        val: group(Split::Val, config.n_val)?,
        test: group(Split::Test, config.n_test)?,
        truth,
        config: config.clone(),
    })
}

/// Initial ensemble `d x N` of a sequence: CW around the true initial state,
/// L96 around zero, GLV around one (then folded to be non-negative).
pub fn initial_ensemble(config: &ExperimentConfig, x0_truth: &Matrix, seq_id: usize) -> Matrix {
    let mut rng = stream(config.seed, &[key("initial-ensemble"), seq_id as u64]);
    let (d, n) = (config.dim, config.members());
    let sd = config.init_var().sqrt();
    let centre = if config.init_at_truth {
        x0_truth.clone()
    } else {
        match config.system {
            System::Cw => x0_truth.clone(),
            System::L96 => Matrix::zeros(d, 1),
            System::Glv => Matrix::filled(d, 1, 1.0),
        }
    };
    let noise = normal_matrix(&mut rng, d, n).scale(sd);
    let ens = Matrix::from_fn(d, n, |i, j| centre.get(i, 0) + noise.get(i, j));
    if config.system == System::Glv {
        ens.map(f64::abs)
    } else {
        ens
    }
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ExperimentConfig,
    truth: TruthSpec,
    /// Filter observation-noise variance and the variance used to draw data.
    r_scale: f64,
    data_noise: f64,
    trajectories: Vec<String>,
}

fn write_truth(path: &Path, truth: &[Matrix]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let d = truth.first().map_or(0, |x| x.rows());
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (t, x) in truth.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.data().iter().map(|&v| fmt(v)));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn write_obs(path: &Path, obs: &[Observation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let k = obs.first().map_or(0, |o| o.dim());
    let mut header = vec!["t".to_string(), "indices".to_string()];
    header.extend((0..k).map(|i| format!("y{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (t, o) in obs.iter().enumerate() {
        let idx: Vec<String> = o.indices.iter().map(|i| i.to_string()).collect();
        let mut row = vec![(t + 1).to_string(), idx.join(";")];
        row.extend(o.values.iter().map(|&v| fmt(v)));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse { path: path.display().to_string(), message: format!("bad value `{s}`") })
}

fn read_truth(path: &Path) -> Result<Vec<Matrix>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let vals = rec.iter().skip(1).map(|s| parse_field(path, s)).collect::<Result<Vec<f64>>>()?;
        out.push(Matrix::column(&vals));
    }
    Ok(out)
}

fn read_obs(path: &Path, r_scale: f64) -> Result<Vec<Observation>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let idx = rec.get(1).unwrap_or("");
        let indices =
            idx.split(';').filter(|s| !s.is_empty()).map(|s| parse_field(path, s)).collect::<Result<Vec<usize>>>()?;
        let values = rec.iter().skip(2).map(|s| parse_field(path, s)).collect::<Result<Vec<f64>>>()?;
        let n = indices.len();
        out.push(Observation::new(indices, values, vec![r_scale; n])?);
    }
    Ok(out)
}

fn file_stem(split: Split, i: usize) -> String {
    format!("{}_{i:02}", split.label())
}

/// Writes `meta.json` plus `<split>_<i>.truth.csv` / `.obs.csv` per trajectory.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for split in Split::ALL {
        for (i, tr) in ds.split(split).iter().enumerate() {
            let stem = file_stem(split, i);
            write_truth(&dir.join(format!("{stem}.truth.csv")), &tr.truth)?;
            write_obs(&dir.join(format!("{stem}.obs.csv")), &tr.obs)?;
            names.push(stem);
        }
    }
    let meta = Meta {
        config: ds.config.clone(),
        truth: ds.truth.clone(),
        r_scale: ds.config.r_scale,
        data_noise: ds.config.data_noise(),
        trajectories: names,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path)?;
    let meta: Meta = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: meta_path.display().to_string(), message: e.to_string() })?;
    let mut groups: [Vec<Trajectory>; 3] = Default::default();
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let n = match split {
            Split::Train => meta.config.n_train,
            Split::Val => meta.config.n_val,
            Split::Test => meta.config.n_test,
        };
        for i in 0..n {
            let stem = file_stem(split, i);
            let truth = read_truth(&dir.join(format!("{stem}.truth.csv")))?;
            let obs = read_obs(&dir.join(format!("{stem}.obs.csv")), meta.r_scale)?;
            groups[k].push(Trajectory { truth, obs });
        }
    }
    let [train, val, test] = groups;
    Ok(Dataset { config: meta.config, truth: meta.truth, train, val, test })
}
