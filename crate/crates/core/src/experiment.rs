//! End-to-end experiment plumbing: initial parameters, training on a dataset,
//! evaluation on the test split, the Kalman reference and checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, System};
use crate::datagen::{initial_ensemble, Dataset, Split, TruthSpec};
use crate::dynamics::{
    build_block_a, rollout, sample_imperfect_l96, true_poly_coefficients, CwModel, ForecastModel, GlvModel,
    PolyL96Model, ResidualNet,
};
use crate::error::{Error, Result};
use crate::filters::{
    gaspari_cohn, kalman_filter, GainFamily, GainSpec, KalmanOutput, BACKGROUND, GAIN, INFLATION, MIXING, NOISE,
};
use crate::learning::ParameterSet;
use crate::learning::{
    select_rates, train, FilterRun, Group, Phase, Problem, Sequence, TrainResult, TrainSettings, Transform,
};
use crate::matrix::Matrix;
use crate::metrics::{
    filter_rmse, forecast_rmse, gaussian_loglik, mean, param_mae, EvalReport, ForecastError, LoglikTrace,
};
use crate::rng::{key, normal_matrix, standard_normal, stream};

/// Rollout length from which forecast-evaluation states are drawn.
pub const ATTRACTOR_ROLLOUT: usize = 10_000;
/// Steps discarded at the start of that rollout.
pub const ATTRACTOR_BURN_IN: usize = 500;
/// Epoch snapshots averaged for the final metrics.
pub const TAIL_EPOCHS: usize = 10;
/// Latent value that saturates a sigmoid to exactly 0 (negated: 1).
const SATURATED: f64 = 1000.0;

/// Non-learned parts of a forecast model that a checkpoint must carry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedModel {
    /// Polynomial coefficients of the imperfect Lorenz-96 base flow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

pub fn build_model(config: &ExperimentConfig, fixed: &FixedModel) -> Result<Box<dyn ForecastModel>> {
    Ok(match config.system {
        System::Cw => Box::new(CwModel::default()),
        System::Glv => Box::new(GlvModel::new(config.dim)?),
        System::L96 => {
            let beta = fixed.beta.clone().unwrap_or_else(|| true_poly_coefficients().to_vec());
            let net = if config.residual_net {
                Some(ResidualNet::new(config.net_channels, config.net_kernel)?)
            } else {
                None
            };
            Box::new(PolyL96Model::new(config.dim, beta, net)?)
        }
    })
}

pub fn gain_spec(config: &ExperimentConfig) -> Result<GainSpec> {
    let mut spec = GainSpec::new(config.method, config.members());
    if config.method.is_ensemble() {
        if let Some(c) = config.taper_radius {
            spec.taper = Some(gaspari_cohn(config.dim, c)?);
        }
    }
    spec.lowrank = config.lowrank_p;
    spec.validate(config.dim)?;
    Ok(spec)
}

/// Observation rows shared by every step of every sequence, if there are such.
pub fn static_rows(dataset: &Dataset) -> Option<Vec<usize>> {
    let mut all = Split::ALL.iter().flat_map(|&s| dataset.split(s)).flat_map(|tr| &tr.obs);
    let first = all.next()?.indices.clone();
    all.all(|o| o.indices == first).then_some(first)
}

fn sigmoid_latent(v: f64) -> Result<f64> {
    match v {
        0.0 => Ok(-SATURATED),
        1.0 => Ok(SATURATED),
        _ => Transform::Sigmoid.inverse(v),
    }
}

/// Initial forecast-model parameters: the truth perturbed with spread
/// `sigma0_sq` (or the truth itself under `perfect_init`), plus any fixed
/// model data.
pub fn initial_model_params(config: &ExperimentConfig, truth: &TruthSpec) -> Result<(ParameterSet, FixedModel)> {
    let mut rng = stream(config.seed, &[key("model-init")]);
    let sd = if config.perfect_init { 0.0 } else { config.sigma0_sq.sqrt() };
    let mut fixed = FixedModel::default();
    let mut ps = ParameterSet::new();
    match config.system {
        System::Cw => {
            // folded so the rate stays positive
            let theta = (truth.params[0].item() + sd * standard_normal(&mut rng)).abs();
            let model = build_model(config, &fixed)?;
            ps.insert(&model.param_specs()[0], Group::Dynamics, Matrix::scalar(theta.max(1e-12)))?;
        }
        System::L96 => {
            let beta_star = true_poly_coefficients();
            let beta = if config.perfect_init {
                beta_star.to_vec()
            } else {
                sample_imperfect_l96(&beta_star, config.sigma0_sq, &mut rng)?
            };
            fixed.beta = Some(beta);
            if config.residual_net {
                let net = ResidualNet::new(config.net_channels, config.net_kernel)?;
                for (spec, w) in net.param_specs().iter().zip(net.init(&mut rng)) {
                    ps.insert(spec, Group::Dynamics, w)?;
                }
            }
        }
        System::Glv => {
            let model = build_model(config, &fixed)?;
            for (spec, value) in model.param_specs().iter().zip(&truth.params) {
                let noise = normal_matrix(&mut rng, value.rows(), value.cols()).scale(sd);
                ps.insert(spec, Group::Dynamics, value.add(&noise))?;
            }
        }
    }
    Ok((ps, fixed))
}

/// Initial filter parameters for the configured family.
pub fn initial_filter_params(
    config: &ExperimentConfig,
    spec: &GainSpec,
    rows: Option<&[usize]>,
    ps: &mut ParameterSet,
) -> Result<()> {
    let d = config.dim;
    let scale = if config.system == System::L96 { 1.0 } else { 0.1 };
    for (p, group) in spec.param_specs(d, rows.map(|r| r.len()))? {
        match p.name.as_str() {
            BACKGROUND => {
                let b = match config.lowrank_p {
                    Some(k) => Matrix::from_fn(d, k, |i, j| if i == j { 0.1 } else { 0.0 }),
                    None => Matrix::scaled_identity(d, scale),
                };
                ps.insert(&p, group, b)?;
            }
            GAIN => {
                let rows = rows.ok_or(Error::StaticObservationRequired)?;
                let k = Matrix::from_fn(d, rows.len(), |i, j| if rows[j] == i { scale } else { 0.0 });
                ps.insert(&p, group, k)?;
            }
            INFLATION => {
                ps.insert_latent(&p.name, group, p.transform, Matrix::scalar(sigmoid_latent(config.inflation)?))
            }
            MIXING => ps.insert_latent(&p.name, group, p.transform, Matrix::scalar(sigmoid_latent(config.mixing)?)),
            NOISE => ps.insert(&p, group, Matrix::filled(d, 1, config.forecast_noise()))?,
            other => return Err(Error::UnknownParameter(other.to_string())),
        }
    }
    Ok(())
}

/// A dataset bound to a model, a filter and initial parameters.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub model: Box<dyn ForecastModel>,
    pub fixed: FixedModel,
    pub spec: GainSpec,
    pub init: ParameterSet,
    ensembles: BTreeMap<(usize, usize), Matrix>,
}

fn split_index(s: Split) -> usize {
    match s {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

impl Experiment {
    /// `config` supplies the method and training settings; the dataset its
    /// own system, dimension and observations.
    pub fn new(config: &ExperimentConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let dc = &dataset.config;
        if (dc.system, dc.dim) != (config.system, config.dim) {
            return Err(Error::validation(
                "system/dim",
                format!(
                    "dataset holds {} with dim {}, config asks for {} with dim {}",
                    dc.system, dc.dim, config.system, config.dim
                ),
            ));
        }
        let rows = static_rows(&dataset);
        if config.method == GainFamily::ThreeDVarK && rows.is_none() {
            return Err(Error::StaticObservationRequired);
        }
        let spec = gain_spec(config)?;
        let (mut init, fixed) = initial_model_params(config, &dataset.truth)?;
        initial_filter_params(config, &spec, rows.as_deref(), &mut init)?;
        let model = build_model(config, &fixed)?;
        let mut ensembles = BTreeMap::new();
        for s in Split::ALL {
            for (i, tr) in dataset.split(s).iter().enumerate() {
                ensembles.insert((split_index(s), i), initial_ensemble(config, tr.x0(), s.seq_id(i)));
            }
        }
        Ok(Experiment { config: config.clone(), dataset, model, fixed, spec, init, ensembles })
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem { model: self.model.as_ref(), spec: &self.spec, seed: self.config.seed }
    }

    pub fn sequences(&self, s: Split) -> Vec<Sequence<'_>> {
        self.dataset
            .split(s)
            .iter()
            .enumerate()
            .map(|(i, tr)| Sequence { id: s.seq_id(i), obs: &tr.obs, x0: &self.ensembles[&(split_index(s), i)] })
            .collect()
    }

    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            epochs: self.config.epochs,
            window: self.config.window,
            lr_theta: self.config.lr_theta,
            lr_phi: self.config.lr_phi,
            patience: self.config.patience,
            ..TrainSettings::default()
        }
    }

    /// Trains from the initial parameters; with a learning-rate grid the
    /// candidate with the best final validation loss is returned.
    pub fn train(&self) -> Result<TrainResult> {
        let problem = self.problem();
        let (tr, val) = (self.sequences(Split::Train), self.sequences(Split::Val));
        if self.config.lr_grid.is_empty() {
            train(&problem, &self.init, &tr, &val, &self.settings())
        } else {
            let (best, mut runs) =
                select_rates(&problem, &self.init, &tr, &val, &self.settings(), &self.config.lr_grid)?;
            Ok(runs.swap_remove(best))
        }
    }

    /// Filters every sequence of a split with `params`.
    pub fn filter(&self, params: &ParameterSet, s: Split) -> Result<Vec<FilterRun>> {
        let problem = self.problem();
        self.sequences(s).iter().map(|seq| problem.run(params, seq, Phase::Evaluation, 0)).collect()
    }

    /// States on which forecast errors are measured: `forecast_points`
    /// states of a held-out truth rollout, after burn-in.
    pub fn attractor_states(&self) -> Result<Matrix> {
        let truth = &self.dataset.truth;
        let mut rng = stream(self.config.seed, &[key("attractor")]);
        let x0 = truth.initial_state(&mut rng)?;
        let states = truth.simulate(&x0, ATTRACTOR_ROLLOUT)?;
        let pool = &states[ATTRACTOR_BURN_IN..];
        let picks = rand::seq::index::sample(&mut rng, pool.len(), self.config.forecast_points.min(pool.len()));
        let d = self.config.dim;
        let cols: Vec<&Matrix> = picks.iter().map(|i| &pool[i]).collect();
        Ok(Matrix::from_fn(d, cols.len(), |i, j| cols[j].get(i, 0)))
    }

    fn model_values(&self, params: &ParameterSet) -> Result<Vec<Matrix>> {
        params.values_for(&self.model.param_specs())
    }

    pub fn forecast_error(&self, params: &ParameterSet, states: &Matrix) -> Result<ForecastError> {
        let truth = &self.dataset.truth;
        let tm = truth.model()?;
        forecast_rmse(self.model.as_ref(), &self.model_values(params)?, tm.as_ref(), &truth.params, states)
    }

    /// Parameter MAE per group in canonical order: `theta` (CW), `A` and `r`
    /// (GLV), `beta` (Lorenz-96 base-flow coefficients).
    pub fn param_errors(&self, params: &ParameterSet) -> Result<BTreeMap<String, f64>> {
        let truth = &self.dataset.truth;
        let mut out = BTreeMap::new();
        match self.config.system {
            System::Cw => {
                out.insert("theta".into(), param_mae(self.model_values(params)?[0].data(), truth.params[0].data())?);
            }
            System::L96 => {
                if let Some(beta) = &self.fixed.beta {
                    out.insert("beta".into(), param_mae(beta, &true_poly_coefficients())?);
                }
            }
            System::Glv => {
                let v = self.model_values(params)?;
                out.insert("A".into(), param_mae(v[0].data(), truth.params[0].data())?);
                let a = build_block_a(v[0].data(), self.config.dim)?;
                let r_hat = a.matmul(&v[1]).scale(-1.0);
                let (_, r_star) = truth.glv_parts().expect("glv truth");
                out.insert("r".into(), param_mae(r_hat.data(), r_star.data())?);
            }
        }
        Ok(out)
    }

    /// Full evaluation on the test split; `tail` snapshots (if any) give
    /// the averaged forecast and parameter errors.
    pub fn evaluate(&self, params: &ParameterSet, tail: &[ParameterSet]) -> Result<Evaluation> {
        let states = self.attractor_states()?;
        let fe = self.forecast_error(params, &states)?;
        let runs = self.filter(params, Split::Test)?;
        let mut analyses = Vec::new();
        let mut truth = Vec::new();
        for (run, tr) in runs.iter().zip(&self.dataset.test) {
            analyses.extend(run.analysis_means.iter().cloned());
            truth.extend(tr.truth[1..].iter().cloned());
        }
        let traces: Vec<LoglikTrace> = runs.iter().map(|r| r.trace()).collect();
        let trace = LoglikTrace::average(&traces)?;
        let mut report = EvalReport {
            system: self.config.system.to_string(),
            method: self.config.method.to_string(),
            forecast_rmse: fe.rmse,
            forecast_diverged: fe.diverged,
            filter_rmse: filter_rmse(&analyses, &truth)?,
            param_mae: self.param_errors(params)?,
            mean_loglik: trace.mean(),
            steps: trace.len(),
            config: serde_json::to_value(&self.config)?,
            ..EvalReport::default()
        };
        if !tail.is_empty() {
            let mut f = Vec::new();
            let mut per: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for p in tail {
                f.push(self.forecast_error(p, &states)?.rmse);
                for (k, v) in self.param_errors(p)? {
                    per.entry(k).or_default().push(v);
                }
            }
            report.forecast_rmse_tail = Some(mean(&f));
            report.param_mae_tail = per.into_iter().map(|(k, v)| (k, mean(&v))).collect();
        }
        Ok(Evaluation { report, trace, runs })
    }

    /// Exact Kalman filter with the true linear dynamics on each test
    /// sequence, started at the true initial state with `P_0 = C~_0`.
    pub fn kalman_reference(&self) -> Result<Vec<KalmanOutput>> {
        let truth = &self.dataset.truth;
        let tm = truth.model()?;
        let m = tm
            .linear_transition(&truth.params)
            .ok_or_else(|| Error::LinearOnly(format!("{} dynamics are nonlinear", self.config.system)))??;
        let p0 = Matrix::scaled_identity(self.config.dim, self.config.init_var());
        self.dataset.test.iter().map(|tr| kalman_filter(tr.x0(), &p0, &m, &tr.obs)).collect()
    }

    /// Per-step log-likelihood of a Kalman run, recomputed from its forecast
    /// means and innovation covariances.
    pub fn kalman_trace(&self, kf: &KalmanOutput, test_index: usize) -> Result<LoglikTrace> {
        let tr = &self.dataset.test[test_index];
        let mut trace = LoglikTrace::default();
        for ((o, xf), s) in tr.obs.iter().zip(&kf.forecasts).zip(&kf.innovation_covs) {
            let r = o.column().sub(&xf.gather_rows(&o.indices)?);
            trace.push(gaussian_loglik(&r, s)?);
        }
        Ok(trace)
    }

    /// The model's trajectory from the true initial state of test sequence
    /// `i`, for plotting against the truth.
    pub fn free_run(&self, params: &ParameterSet, i: usize, steps: usize) -> Result<Vec<Matrix>> {
        rollout(self.model.as_ref(), &self.model_values(params)?, self.dataset.test[i].x0(), steps)
    }
}

pub struct Evaluation {
    pub report: EvalReport,
    /// Per-step trace averaged over test sequences.
    pub trace: LoglikTrace,
    pub runs: Vec<FilterRun>,
}

/// Checkpoint: latent parameter values by name with shape, transform and
/// group; matrices as nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub system: System,
    pub method: GainFamily,
    pub params: BTreeMap<String, CheckpointEntry>,
    /// Order of `params` as trained.
    pub order: Vec<String>,
    #[serde(default)]
    pub fixed: FixedModel,
    /// Configuration the parameters were trained under.
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub shape: [usize; 2],
    pub group: Group,
    pub transform: Transform,
    pub latent: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(config: &ExperimentConfig, params: &ParameterSet, fixed: &FixedModel) -> Self {
        let entries = params
            .iter()
            .map(|p| {
                let e = CheckpointEntry {
                    shape: [p.latent.rows(), p.latent.cols()],
                    group: p.group,
                    transform: p.transform,
                    latent: p.latent.to_rows(),
                };
                (p.name.clone(), e)
            })
            .collect();
        Checkpoint {
            system: config.system,
            method: config.method,
            params: entries,
            order: params.names(),
            fixed: fixed.clone(),
            config: config.clone(),
        }
    }

    pub fn parameters(&self) -> Result<ParameterSet> {
        let mut ps = ParameterSet::new();
        for name in &self.order {
            let e = self.params.get(name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            let m =
                if e.latent.is_empty() { Matrix::zeros(e.shape[0], e.shape[1]) } else { Matrix::from_rows(&e.latent)? };
            if m.shape() != (e.shape[0], e.shape[1]) {
                return Err(Error::Dim(format!("{name}: stored {:?} but values are {:?}", e.shape, m.shape())));
            }
            ps.insert_latent(name, e.group, e.transform, m);
        }
        Ok(ps)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })
    }
}

/// Writes `curves.csv`: epoch, train_loss, val_loss, lr_theta, lr_phi.
pub fn write_curves(path: &Path, result: &TrainResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::metrics::csv_err(path, e))?;
    w.write_record(["epoch", "train_loss", "val_loss", "lr_theta", "lr_phi", "updates", "skipped"])
        .map_err(|e| crate::metrics::csv_err(path, e))?;
    for c in &result.curves {
        let f = crate::metrics::fmt;
        let row = [
            c.epoch.to_string(),
            f(c.train_loss),
            f(c.val_loss),
            f(c.lr_theta),
            f(c.lr_phi),
            c.updates.to_string(),
            c.skipped.to_string(),
        ];
        w.write_record(&row).map_err(|e| crate::metrics::csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Toy systems for gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToySystem {
    /// `x -> M x` with `d = 3` and a learnable `M`.
    Linear,
    /// Clohessy-Wiltshire, positions observed, learnable rate.
    Cw,
}

impl ToySystem {
    pub const ALL: [ToySystem; 2] = [ToySystem::Linear, ToySystem::Cw];

    pub fn label(self) -> &'static str {
        match self {
            ToySystem::Linear => "linear",
            ToySystem::Cw => "cw",
        }
    }
}

/// One row of the gradient-check table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub family: GainFamily,
    pub system: ToySystem,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst: String,
    pub passed: bool,
}

/// Reverse-mode window gradients of every latent parameter against central
/// differences of the same window loss, with the random stream frozen.
/// `corrupt` perturbs the adjoints to exercise the failure path.
pub fn gradcheck_family(
    family: GainFamily,
    system: ToySystem,
    seed: u64,
    steps: usize,
    corrupt: bool,
    threshold: f64,
) -> Result<GradCheckRow> {
    use crate::dynamics::LinearModel;
    use crate::filters::Observation;
    let n = if family.is_ensemble() { 4 } else { 1 };
    let mut rng = stream(seed, &[key("gradcheck"), key(system.label())]);
    let (model, truth_m, x0_truth, rows): (Box<dyn ForecastModel>, Matrix, Matrix, Vec<usize>) = match system {
        ToySystem::Linear => {
            let m = Matrix::from_rows(&[vec![0.9, 0.1, 0.0], vec![-0.1, 0.9, 0.05], vec![0.0, 0.1, 0.8]])?;
            (Box::new(LinearModel { dim: 3 }), m, Matrix::column(&[1.0, -0.5, 0.3]), vec![0, 2])
        }
        ToySystem::Cw => {
            let m = crate::dynamics::cw_transition(crate::dynamics::CW_RATE, crate::dynamics::CW_DT)?;
            (Box::new(CwModel::default()), m, Matrix::column(&crate::dynamics::CW_X0), vec![0, 1, 2])
        }
    };
    let d = x0_truth.rows();
    let mut x = x0_truth.clone();
    let mut obs = Vec::with_capacity(steps);
    for _ in 0..steps {
        x = truth_m.matmul(&x);
        let values = rows.iter().map(|&i| x.get(i, 0) + 0.3 * standard_normal(&mut rng)).collect();
        obs.push(Observation::new(rows.clone(), values, vec![0.1; rows.len()])?);
    }
    let spec = GainSpec::new(family, n);
    let mut params = ParameterSet::new();
    let dyn_spec = &model.param_specs()[0];
    let m0 = match system {
        ToySystem::Linear => truth_m.add(&normal_matrix(&mut rng, d, d).scale(0.05)),
        ToySystem::Cw => Matrix::scalar(0.002),
    };
    params.insert(dyn_spec, Group::Dynamics, m0)?;
    for (p, group) in spec.param_specs(d, Some(rows.len()))? {
        let value = match p.name.as_str() {
            BACKGROUND => Matrix::from_fn(d, d, |i, j| if i == j { 0.5 } else { 0.05 }),
            GAIN => Matrix::from_fn(d, rows.len(), |i, j| if rows[j] == i { 0.4 } else { 0.02 }),
            INFLATION => Matrix::scalar(0.2),
            MIXING => Matrix::scalar(0.4),
            NOISE => Matrix::filled(d, 1, 0.05),
            other => return Err(Error::UnknownParameter(other.to_string())),
        };
        params.insert(&p, group, value)?;
    }
    let ens = Matrix::from_fn(d, n, |i, _| x0_truth.get(i, 0)).add(&normal_matrix(&mut rng, d, n).scale(0.2));
    let problem = Problem { model: model.as_ref(), spec: &spec, seed };
    let rng_at = |t| crate::learning::step_rng(seed, Phase::Train, 0, 0, t);
    let (_, mut grads, _) = problem.window_gradients(&params, &ens, &obs, 0, rng_at)?;
    if corrupt {
        if let Some(g) = grads.values_mut().next() {
            g.data_mut()[0] = g.data()[0] * 1.01 + 1e-3;
        }
    }
    let loss = |ps: &ParameterSet| problem.window_gradients(ps, &ens, &obs, 0, rng_at).map(|r| r.0);
    let mut worst = (0.0f64, String::new());
    let mut entries = 0;
    for p in params.iter() {
        let h = 1e-6;
        for j in 0..p.latent.len() {
            let mut plus = params.clone();
            plus.get_mut(&p.name).expect("param").latent.data_mut()[j] += h;
            let mut minus = params.clone();
            minus.get_mut(&p.name).expect("param").latent.data_mut()[j] -= h;
            let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
            let ad = grads[&p.name].data()[j];
            let err = (ad - fd).abs() / fd.abs().max(1.0);
            if err > worst.0 || err.is_nan() {
                worst = (err, format!("{}[{j}]", p.name));
            }
            entries += 1;
        }
    }
    Ok(GradCheckRow { family, system, entries, max_rel_error: worst.0, worst: worst.1, passed: worst.0 < threshold })
}
