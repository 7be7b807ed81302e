use std::collections::BTreeMap;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dynamics::ForecastModel;
use crate::error::{Error, Result};
use crate::filters::{BoundFilter, ForecastStats, GainFamily, GainSpec, Observation};
use crate::matrix::Matrix;
use crate::metrics::{gaussian_loglik, LoglikTrace};
use crate::rng::{key, stream, Rng};

use super::loss::{loss_3dvar_k, nll_loss};
use super::optim::{Adam, PlateauScheduler};
use super::params::ParameterSet;

/// One observation sequence with its fixed initial ensemble.
#[derive(Clone, Copy, Debug)]
pub struct Sequence<'a> {
    pub id: usize,
    pub obs: &'a [Observation],
    pub x0: &'a Matrix,
}

/// Forecast model, gain family and seed shared by every run of a problem.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a dyn ForecastModel,
    pub spec: &'a GainSpec,
    pub seed: u64,
}

/// Which random streams a run draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Validation,
    Evaluation,
}

impl Phase {
    fn key(self) -> u64 {
        match self {
            Phase::Train => key("train"),
            Phase::Validation => key("validation"),
            Phase::Evaluation => key("evaluation"),
        }
    }
}

/// Per-step stream keyed by (seed, phase, sequence, epoch, time), so the noise
/// at a given time never depends on how the sequence is cut into windows.
pub fn step_rng(seed: u64, phase: Phase, seq: usize, epoch: usize, t: usize) -> Rng {
    stream(seed, &[phase.key(), seq as u64, epoch as u64, t as u64])
}

pub struct WindowOutput {
    pub loss: Var,
    pub last: Var,
    pub stats: Vec<ForecastStats>,
}

impl<'a> Problem<'a> {
    /// Filters `obs` (times `t0 + 1 ..`) from `ens` on `tape` and records the window loss.
    pub fn window(
        &self,
        tape: &mut Tape,
        bf: &BoundFilter<'_>,
        ens: &Matrix,
        obs: &[Observation],
        t0: usize,
        mut rng_at: impl FnMut(usize) -> Rng,
    ) -> Result<WindowOutput> {
        let mut x = tape.constant(ens.clone());
        let mut stats = Vec::with_capacity(obs.len());
        for (k, o) in obs.iter().enumerate() {
            let mut rng = rng_at(t0 + k + 1);
            let out = bf.step(tape, x, o, &mut rng)?;
            stats.push(out.stats);
            x = out.analysis;
        }
        let loss = match self.spec.family {
            GainFamily::ThreeDVarK => loss_3dvar_k(tape, &stats, obs)?,
            _ => nll_loss(tape, &stats, obs)?,
        };
        if !tape.value(loss).item().is_finite() {
            return Err(Error::BlowUp { context: "window loss" });
        }
        Ok(WindowOutput { loss, last: x, stats })
    }

    /// Loss, parameter gradients (by name, w.r.t. latents) and the detached
    /// final analysis ensemble of one window.
    pub fn window_gradients(
        &self,
        params: &ParameterSet,
        ens: &Matrix,
        obs: &[Observation],
        t0: usize,
        rng_at: impl FnMut(usize) -> Rng,
    ) -> Result<(f64, BTreeMap<String, Matrix>, Matrix)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let bf = BoundFilter::bind(&mut tape, self.model, self.spec, &bound)?;
        let out = self.window(&mut tape, &bf, ens, obs, t0, rng_at)?;
        let mut grads = tape.backward(out.loss)?;
        let named =
            bound.leaves().map(|(name, leaf)| (name.clone(), grads.take(leaf).expect("leaf adjoint"))).collect();
        Ok((tape.value(out.loss).item(), named, tape.value(out.last).clone()))
    }

    /// Runs the filter over a whole sequence without gradients.
    pub fn run(&self, params: &ParameterSet, seq: &Sequence<'_>, phase: Phase, epoch: usize) -> Result<FilterRun> {
        let (d, n) = seq.x0.shape();
        let chunk = (200_000 / (d * n).max(1)).clamp(1, 20);
        let mut run = FilterRun::default();
        let mut ens = seq.x0.clone();
        let mut t0 = 0;
        for block in seq.obs.chunks(chunk) {
            let mut tape = Tape::new();
            let vals = params.iter().map(|p| (p.name.clone(), p.transform, p.latent.clone()));
            let bound = constant_params(&mut tape, vals)?;
            let bf = BoundFilter::bind(&mut tape, self.model, self.spec, &bound)?;
            let mut x = tape.constant(ens);
            for (k, o) in block.iter().enumerate() {
                let t = t0 + k + 1;
                let mut rng = step_rng(self.seed, phase, seq.id, epoch, t);
                let out = bf.step(&mut tape, x, o, &mut rng)?;
                run.push(&tape, &out.stats, o)?;
                run.analysis_means.push(tape.value(out.analysis).row_means());
                x = out.analysis;
            }
            ens = tape.value(x).clone();
            t0 += block.len();
        }
        run.final_ensemble = ens;
        Ok(run)
    }
}

fn constant_params(
    tape: &mut Tape,
    vals: impl Iterator<Item = (String, super::Transform, Matrix)>,
) -> Result<super::BoundParams> {
    let mut ps = ParameterSet::new();
    for (name, tr, latent) in vals {
        ps.insert_latent(&name, super::Group::Filter, tr, latent);
    }
    // leaves are harmless here: no backward pass is ever taken on this tape
    ps.bind(tape)
}

/// Analysis means and per-step forecast log-likelihood terms of a filter run.
#[derive(Clone, Debug, Default)]
pub struct FilterRun {
    /// Ensemble mean of each analysis, `t = 1..T`.
    pub analysis_means: Vec<Matrix>,
    /// `-1/2 log det S_t`.
    pub logdet_terms: Vec<f64>,
    /// `-1/2 r_t^T S_t^{-1} r_t`.
    pub residual_terms: Vec<f64>,
    /// `log N(y_t; H_t m_t, S_t)` including the `2 pi` constant.
    pub loglik: Vec<f64>,
    pub final_ensemble: Matrix,
}

impl FilterRun {
    fn push(&mut self, tape: &Tape, st: &ForecastStats, o: &Observation) -> Result<()> {
        let m = tape.value(st.mean);
        let r = o.column().sub(&m.gather_rows(&o.indices)?);
        let terms = gaussian_loglik(&r, tape.value(st.s))?;
        self.logdet_terms.push(terms.logdet);
        self.residual_terms.push(terms.residual);
        self.loglik.push(terms.total);
        Ok(())
    }

    pub fn trace(&self) -> LoglikTrace {
        LoglikTrace {
            loglik: self.loglik.clone(),
            logdet: self.logdet_terms.clone(),
            residual: self.residual_terms.clone(),
        }
    }

    /// Training-loss value of the run: negative log-likelihood without `2 pi`.
    pub fn nll(&self) -> f64 {
        -self.logdet_terms.iter().chain(&self.residual_terms).sum::<f64>()
    }

    pub fn steps(&self) -> usize {
        self.loglik.len()
    }
}

/// Settings of a training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub window: usize,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub patience: usize,
    pub factor: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { epochs: 40, window: 20, lr_theta: 1e-2, lr_phi: 1e-2, patience: 5, factor: 0.1 }
    }
}

/// One window's outcome, reported to an observer during an epoch.
pub struct WindowReport<'a> {
    pub seq: usize,
    pub index: usize,
    pub t0: usize,
    pub loss: f64,
    pub grads: &'a BTreeMap<String, Matrix>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean per-step window loss over successful windows.
    pub train_loss: f64,
    pub updates: usize,
    pub skipped: usize,
}

/// One epoch of truncated backpropagation: each sequence is cut into windows
/// of `window` steps; each window gets one Adam update and hands its analysis
/// ensemble, detached, to the next.
pub fn tbptt_epoch(
    problem: &Problem<'_>,
    params: &mut ParameterSet,
    opt: &mut Adam,
    seqs: &[Sequence<'_>],
    window: usize,
    epoch: usize,
    mut observer: impl FnMut(&WindowReport<'_>),
) -> Result<EpochStats> {
    if window == 0 {
        return Err(Error::validation("window", "subsequence length must be at least 1"));
    }
    let mut stats = EpochStats::default();
    let (mut loss_sum, mut steps) = (0.0, 0usize);
    for seq in seqs {
        let mut ens = seq.x0.clone();
        for (j, obs) in seq.obs.chunks(window).enumerate() {
            let t0 = j * window;
            let rng_at = |t| step_rng(problem.seed, Phase::Train, seq.id, epoch, t);
            let result = problem.window_gradients(params, &ens, obs, t0, rng_at).and_then(|(loss, grads, last)| {
                observer(&WindowReport { seq: seq.id, index: j, t0, loss, grads: &grads });
                opt.step(params, &grads)?;
                Ok((loss, last))
            });
            match result {
                Ok((loss, last)) => {
                    let w = match problem.spec.family {
                        GainFamily::ThreeDVarK => loss * obs.len() as f64,
                        _ => loss,
                    };
                    loss_sum += w;
                    steps += obs.len();
                    stats.updates += 1;
                    ens = last;
                }
                Err(e) if e.is_divergence() => {
                    warn!("epoch {epoch} sequence {} window {j}: {e}; update skipped", seq.id);
                    stats.skipped += 1;
                    ens = seq.x0.clone();
                }
                Err(e) => return Err(e),
            }
        }
    }
    stats.train_loss = if steps > 0 { loss_sum / steps as f64 } else { f64::NAN };
    Ok(stats)
}

/// Mean over sequences of the per-step validation loss.
pub fn validation_loss(problem: &Problem<'_>, params: &ParameterSet, seqs: &[Sequence<'_>]) -> f64 {
    if seqs.is_empty() {
        return f64::NAN;
    }
    let mut total = 0.0;
    for seq in seqs {
        match problem.run(params, seq, Phase::Validation, 0) {
            Ok(run) if run.steps() > 0 && run.nll().is_finite() => total += run.nll() / run.steps() as f64,
            Ok(run) if run.steps() > 0 => return f64::INFINITY,
            Ok(_) => {}
            Err(e) => {
                debug!("validation run {} failed: {e}", seq.id);
                return f64::INFINITY;
            }
        }
    }
    total / seqs.len() as f64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub updates: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: ParameterSet,
    pub curves: Vec<EpochRecord>,
    /// Parameters at the end of each epoch.
    pub snapshots: Vec<ParameterSet>,
    /// Set when every window of an epoch diverged; curves are partial.
    pub diverged: Option<String>,
}

impl TrainResult {
    pub fn into_result(self) -> Result<TrainResult> {
        match &self.diverged {
            Some(msg) => Err(Error::DivergedRun(msg.clone())),
            None => Ok(self),
        }
    }

    /// The last `k` snapshots (all of them when fewer exist).
    pub fn tail_snapshots(&self, k: usize) -> &[ParameterSet] {
        &self.snapshots[self.snapshots.len().saturating_sub(k)..]
    }
}

/// Full training loop: TBPTT epochs, validation loss for the plateau
/// scheduler, and per-epoch parameter snapshots.
pub fn train(
    problem: &Problem<'_>,
    init: &ParameterSet,
    train_seqs: &[Sequence<'_>],
    val_seqs: &[Sequence<'_>],
    settings: &TrainSettings,
) -> Result<TrainResult> {
    if problem.spec.family == GainFamily::ThreeDVarK {
        for seq in train_seqs.iter().chain(val_seqs) {
            if seq.obs.windows(2).any(|w| w[0].indices != w[1].indices) {
                return Err(Error::StaticObservationRequired);
            }
        }
    }
    let mut params = init.clone();
    let mut opt = Adam::new(settings.lr_theta, settings.lr_phi);
    let mut sched = PlateauScheduler::new(settings.patience, settings.factor);
    let mut result = TrainResult { params: init.clone(), curves: Vec::new(), snapshots: Vec::new(), diverged: None };
    for epoch in 1..=settings.epochs {
        let st = tbptt_epoch(problem, &mut params, &mut opt, train_seqs, settings.window, epoch, |_| {})?;
        let val = validation_loss(problem, &params, val_seqs);
        let record = EpochRecord {
            epoch,
            train_loss: st.train_loss,
            val_loss: val,
            lr_theta: opt.lr_theta,
            lr_phi: opt.lr_phi,
            updates: st.updates,
            skipped: st.skipped,
        };
        info!(
            "epoch {epoch}: train {:.6} val {:.6} ({} updates, {} skipped)",
            st.train_loss, val, st.updates, st.skipped
        );
        result.curves.push(record);
        result.snapshots.push(params.clone());
        if st.updates == 0 && st.skipped > 0 {
            result.diverged = Some(format!("every window diverged in epoch {epoch}"));
            break;
        }
        sched.step(val, &mut opt);
    }
    result.params = params;
    Ok(result)
}

/// Trains once per `(lr_theta, lr_phi)` candidate and keeps the run with the
/// lowest final validation loss. Returns the winning index and all runs.
pub fn select_rates(
    problem: &Problem<'_>,
    init: &ParameterSet,
    train_seqs: &[Sequence<'_>],
    val_seqs: &[Sequence<'_>],
    settings: &TrainSettings,
    grid: &[(f64, f64)],
) -> Result<(usize, Vec<TrainResult>)> {
    if grid.is_empty() {
        return Err(Error::validation("lr_grid", "no learning-rate candidates"));
    }
    let mut runs = Vec::with_capacity(grid.len());
    for &(lr_theta, lr_phi) in grid {
        let s = TrainSettings { lr_theta, lr_phi, ..settings.clone() };
        runs.push(train(problem, init, train_seqs, val_seqs, &s)?);
    }
    let score = |r: &TrainResult| match (&r.diverged, r.curves.last()) {
        (None, Some(c)) if c.val_loss.is_finite() => c.val_loss,
        _ => f64::INFINITY,
    };
    let best = (0..runs.len()).min_by(|&a, &b| score(&runs[a]).total_cmp(&score(&runs[b]))).unwrap_or(0);
    Ok((best, runs))
}
