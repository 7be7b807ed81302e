//! Forecast, filter and parameter errors, the forecast log-likelihood trace,
//! and their serialized report.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step_values, ForecastModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `sqrt(sum ||F^(x_p) - F*(x_p)||^2 / (d P))` from the two `d x P` forecasts.
pub fn forecast_rmse_values(pred: &Matrix, truth: &Matrix) -> Result<f64> {
    let diff = pred.try_sub(truth)?;
    if diff.is_empty() {
        return Err(Error::Dim("no forecast states".into()));
    }
    Ok((diff.data().iter().map(|v| v * v).sum::<f64>() / diff.len() as f64).sqrt())
}

/// One-step forecast RMSE of a model against the true flow at `states`
/// (`d x P`). A forecast that blows up scores `+inf` with `diverged` set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastError {
    pub rmse: f64,
    pub diverged: bool,
}

pub fn forecast_rmse(
    model: &dyn ForecastModel,
    params: &[Matrix],
    truth_model: &dyn ForecastModel,
    truth_params: &[Matrix],
    states: &Matrix,
) -> Result<ForecastError> {
    let target = step_values(truth_model, truth_params, states)?;
    match step_values(model, params, states) {
        Ok(pred) if pred.is_finite() => {
            Ok(ForecastError { rmse: forecast_rmse_values(&pred, &target)?, diverged: false })
        }
        Ok(_) => Ok(ForecastError { rmse: f64::INFINITY, diverged: true }),
        Err(e) if e.is_divergence() => Ok(ForecastError { rmse: f64::INFINITY, diverged: true }),
        Err(e) => Err(e),
    }
}

/// `sqrt(sum_t ||x_t - x*_t||^2 / (d T))`.
pub fn filter_rmse(analyses: &[Matrix], truth: &[Matrix]) -> Result<f64> {
    if analyses.len() != truth.len() || analyses.is_empty() {
        return Err(Error::Dim(format!("{} analyses for {} truth states", analyses.len(), truth.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, x) in analyses.iter().zip(truth) {
        let diff = a.try_sub(x)?;
        sum += diff.data().iter().map(|v| v * v).sum::<f64>();
        count += diff.len();
    }
    Ok((sum / count as f64).sqrt())
}

/// `||est - truth||_1 / len`.
pub fn param_mae(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dim(format!("{} estimates for {} parameters", est.len(), truth.len())));
    }
    Ok(est.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64)
}

/// The two parts of `log N(y; mean, S)` and the full value with `2 pi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoglikTerms {
    /// `-1/2 log det S`.
    pub logdet: f64,
    /// `-1/2 r^T S^{-1} r`.
    pub residual: f64,
    pub total: f64,
}

pub fn gaussian_loglik(residual: &Matrix, s: &Matrix) -> Result<LoglikTerms> {
    let w = s.solve_psd(residual)?;
    let quad: f64 = residual.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
    let logdet = -0.5 * s.logdet_psd()?;
    let res = -0.5 * quad;
    let k = residual.rows() as f64;
    Ok(LoglikTerms { logdet, residual: res, total: logdet + res - 0.5 * k * (2.0 * PI).ln() })
}

/// Per-step log-likelihood trace with its decomposition.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoglikTrace {
    pub loglik: Vec<f64>,
    pub logdet: Vec<f64>,
    pub residual: Vec<f64>,
}

impl LoglikTrace {
    pub fn push(&mut self, t: LoglikTerms) {
        self.loglik.push(t.total);
        self.logdet.push(t.logdet);
        self.residual.push(t.residual);
    }

    pub fn len(&self) -> usize {
        self.loglik.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loglik.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.loglik)
    }

    /// Pointwise mean of several equally long traces.
    pub fn average(traces: &[LoglikTrace]) -> Result<LoglikTrace> {
        let Some(first) = traces.first() else {
            return Ok(LoglikTrace::default());
        };
        let n = first.len();
        if traces.iter().any(|t| t.len() != n) {
            return Err(Error::Dim("traces of different lengths".into()));
        }
        let k = traces.len() as f64;
        let avg = |f: fn(&LoglikTrace) -> &Vec<f64>| -> Vec<f64> {
            (0..n).map(|i| traces.iter().map(|t| f(t)[i]).sum::<f64>() / k).collect()
        };
        Ok(LoglikTrace { loglik: avg(|t| &t.loglik), logdet: avg(|t| &t.logdet), residual: avg(|t| &t.residual) })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(["t", "loglik", "logdet_term", "residual_term"]).map_err(|e| csv_err(path, e))?;
        for i in 0..self.len() {
            let row = [(i + 1).to_string(), fmt(self.loglik[i]), fmt(self.logdet[i]), fmt(self.residual[i])];
            w.write_record(&row).map_err(|e| csv_err(path, e))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median of the finite-or-infinite values; NaN when empty.
pub fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

/// Evaluation summary of one trained (or initial) parameter set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub method: String,
    pub forecast_rmse: f64,
    pub forecast_diverged: bool,
    /// Forecast RMSE averaged over the last training-epoch snapshots.
    pub forecast_rmse_tail: Option<f64>,
    pub filter_rmse: f64,
    /// Parameter MAE per group, e.g. `theta`, `A`, `r`.
    pub param_mae: BTreeMap<String, f64>,
    pub param_mae_tail: BTreeMap<String, f64>,
    pub mean_loglik: f64,
    pub steps: usize,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Analysis means as CSV: `t, m0..m{d-1}, x0..x{d-1}` (estimate then truth).
pub fn write_analysis_csv(path: &Path, analyses: &[Matrix], truth: &[Matrix]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let d = analyses.first().map_or(0, |m| m.rows());
    let mut header = vec!["t".to_string()];
    header.extend((0..d).map(|i| format!("m{i}")));
    header.extend((0..d).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (t, (a, x)) in analyses.iter().zip(truth).enumerate() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(a.data().iter().chain(x.data()).map(|&v| fmt(v)));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse { path: path.display().to_string(), message: e.to_string() }
}
