//! Python module `adfilter`: configurations, experiments and the numerical
//! checks of `adfilter-core`. Matrices cross the boundary as lists of rows.

use std::collections::BTreeMap;

use adfilter_core::config::ExperimentConfig;
use adfilter_core::datagen::{build_dataset, Split};
use adfilter_core::dynamics::{build_block_a as block_a, glv_rhs_values};
use adfilter_core::experiment::{gradcheck_family, Experiment as CoreExperiment, ToySystem};
use adfilter_core::filters::{gaspari_cohn as taper, kalman_filter as kf, GainFamily, Observation};
use adfilter_core::learning::ParameterSet;
use adfilter_core::{Error, Matrix};
use pyo3::exceptions::{PyFloatingPointError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::DivergedRun(_) => PyFloatingPointError::new_err(e.to_string()),
        e if e.is_divergence() => PyFloatingPointError::new_err(e.to_string()),
        Error::Validation { .. }
        | Error::EmptyObservation { .. }
        | Error::DimTooSmall { .. }
        | Error::StaticObservationRequired
        | Error::LinearOnly(_)
        | Error::Json(_)
        | Error::Parse { .. } => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &Rows) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(py_err)
}

fn column(v: &Matrix) -> Vec<f64> {
    v.data().to_vec()
}

fn to_py(py: Python<'_>, v: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| py_err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Experiment configuration; keyword arguments are the flat JSON keys.
#[pyclass(name = "Config", module = "adfilter", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let text: String = match kwargs {
            Some(k) => py.import("json")?.call_method1("dumps", (k,))?.extract()?,
            None => "{}".into(),
        };
        Self::from_json(&text)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = ExperimentConfig::from_json(text).map_err(py_err)?;
        inner.validate().map_err(py_err)?;
        Ok(PyConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| py_err(e.into()))
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn system(&self) -> String {
        self.inner.system.to_string()
    }

    #[getter]
    fn method(&self) -> String {
        self.inner.method.to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(system={}, method={}, dim={}, T={})",
            self.inner.system, self.inner.method, self.inner.dim, self.inner.steps
        )
    }
}

/// Dataset, model, filter and parameters of one run.
#[pyclass(name = "Experiment", module = "adfilter", unsendable)]
struct PyExperiment {
    exp: CoreExperiment,
    trained: Option<ParameterSet>,
}

fn split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(PyValueError::new_err(format!("unknown split `{name}` (train, val, test)"))),
    }
}

impl PyExperiment {
    fn params(&self, trained: bool) -> PyResult<&ParameterSet> {
        match (trained, &self.trained) {
            (false, _) => Ok(&self.exp.init),
            (true, Some(p)) => Ok(p),
            (true, None) => Err(PyRuntimeError::new_err("call train() first")),
        }
    }
}

#[pymethods]
impl PyExperiment {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        let ds = build_dataset(&config.inner).map_err(py_err)?;
        let exp = CoreExperiment::new(&config.inner, ds).map_err(py_err)?;
        Ok(PyExperiment { exp, trained: None })
    }

    /// Runs training; returns the per-epoch curves.
    fn train(&mut self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let res = self.exp.train().map_err(py_err)?;
        let curves = to_py(py, &res.curves)?;
        let diverged = res.diverged.clone();
        self.trained = Some(res.params);
        if let Some(msg) = diverged {
            return Err(py_err(Error::DivergedRun(msg)));
        }
        Ok(curves)
    }

    /// Constrained parameter values by name.
    #[pyo3(signature = (trained = true))]
    fn parameters(&self, trained: bool) -> PyResult<BTreeMap<String, Rows>> {
        Ok(self.params(trained)?.iter().map(|p| (p.name.clone(), p.constrained().to_rows())).collect())
    }

    #[pyo3(signature = (trained = true))]
    fn param_errors(&self, trained: bool) -> PyResult<BTreeMap<String, f64>> {
        self.exp.param_errors(self.params(trained)?).map_err(py_err)
    }

    /// Evaluation report on the test split.
    #[pyo3(signature = (trained = true))]
    fn evaluate(&self, py: Python<'_>, trained: bool) -> PyResult<Py<PyAny>> {
        let ev = self.exp.evaluate(self.params(trained)?, &[]).map_err(py_err)?;
        to_py(py, &ev.report)
    }

    /// Per-step forecast log-likelihood of each test sequence.
    #[pyo3(signature = (trained = true))]
    fn loglik_traces(&self, trained: bool) -> PyResult<Vec<Vec<f64>>> {
        let runs = self.exp.filter(self.params(trained)?, Split::Test).map_err(py_err)?;
        Ok(runs.into_iter().map(|r| r.loglik).collect())
    }

    /// Exact Kalman filter on each test sequence (linear systems only).
    fn kalman_reference(&self, py: Python<'_>) -> PyResult<Vec<Py<PyAny>>> {
        let outs = self.exp.kalman_reference().map_err(py_err)?;
        outs.iter()
            .map(|o| {
                let d = PyDict::new(py);
                d.set_item("analyses", o.analyses.iter().map(column).collect::<Vec<_>>())?;
                d.set_item("loglik_trace", o.loglik_trace.clone())?;
                d.set_item("loglik", o.loglik)?;
                Ok(d.into_any().unbind())
            })
            .collect()
    }

    /// True states `x_0..x_T` of one trajectory.
    #[pyo3(signature = (split_name = "test", index = 0))]
    fn truth(&self, split_name: &str, index: usize) -> PyResult<Rows> {
        let trs = self.exp.dataset.split(split(split_name)?);
        let tr = trs
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("{split_name} has {} trajectories", trs.len())))?;
        Ok(tr.truth.iter().map(column).collect())
    }

    fn __repr__(&self) -> String {
        let c = &self.exp.config;
        format!("Experiment({} {}, trained={})", c.system, c.method, self.trained.is_some())
    }
}

fn family(name: &str) -> PyResult<GainFamily> {
    name.parse().map_err(py_err)
}

/// Adjoint gradients against central differences on a toy system.
#[pyfunction]
#[pyo3(signature = (method, system = "linear", seed = 0, steps = 5, corrupt = false, threshold = 1e-4))]
fn gradcheck(
    py: Python<'_>,
    method: &str,
    system: &str,
    seed: u64,
    steps: usize,
    corrupt: bool,
    threshold: f64,
) -> PyResult<Py<PyAny>> {
    let toy = match system {
        "linear" => ToySystem::Linear,
        "cw" => ToySystem::Cw,
        _ => return Err(PyValueError::new_err(format!("unknown toy system `{system}` (linear, cw)"))),
    };
    let row = gradcheck_family(family(method)?, toy, seed, steps, corrupt, threshold).map_err(py_err)?;
    to_py(py, &row)
}

#[pyfunction]
fn gaspari_cohn(d: usize, c: f64) -> PyResult<Rows> {
    Ok(taper(d, c).map_err(py_err)?.to_rows())
}

#[pyfunction]
fn build_block_a(a: Vec<f64>, d: usize) -> PyResult<Rows> {
    Ok(block_a(&a, d).map_err(py_err)?.to_rows())
}

#[pyfunction]
fn glv_rhs(x: Vec<f64>, a: Rows, r: Vec<f64>) -> PyResult<Vec<f64>> {
    glv_rhs_values(&x, &matrix(&a)?, &r).map_err(py_err)
}

/// Exact Kalman filter; each observation is `(indices, values, noise_var)`.
#[pyfunction]
fn kalman_filter(
    py: Python<'_>,
    x0: Vec<f64>,
    p0: Rows,
    m: Rows,
    observations: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)>,
) -> PyResult<Py<PyAny>> {
    let obs = observations
        .into_iter()
        .map(|(i, v, r)| Observation::new(i, v, r))
        .collect::<adfilter_core::Result<Vec<_>>>()
        .map_err(py_err)?;
    let out = kf(&Matrix::column(&x0), &matrix(&p0)?, &matrix(&m)?, &obs).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("analyses", out.analyses.iter().map(column).collect::<Vec<_>>())?;
    d.set_item("covariances", out.covariances.iter().map(Matrix::to_rows).collect::<Vec<_>>())?;
    d.set_item("loglik_trace", out.loglik_trace)?;
    d.set_item("loglik", out.loglik)?;
    Ok(d.into_any().unbind())
}

#[pymodule]
pub fn adfilter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(gaspari_cohn, m)?)?;
    m.add_function(wrap_pyfunction!(build_block_a, m)?)?;
    m.add_function(wrap_pyfunction!(glv_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(kalman_filter, m)?)?;
    m.add("METHODS", GainFamily::ALL.iter().map(|f| f.to_string()).collect::<Vec<_>>())?;
    Ok(())
}
