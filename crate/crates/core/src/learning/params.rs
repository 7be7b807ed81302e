use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Map from an unconstrained latent value to the constrained parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    /// Onto `(0, 1)`.
    Sigmoid,
    /// Onto `(0, inf)`.
    Softplus,
}

impl Transform {
    pub fn forward(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Sigmoid => sigmoid(x),
            Transform::Softplus => softplus(x),
        }
    }

    /// Latent value for a constrained one. Values on or outside the boundary
    /// are rejected.
    pub fn inverse(self, y: f64) -> Result<f64> {
        match self {
            Transform::Identity => Ok(y),
            Transform::Sigmoid if y > 0.0 && y < 1.0 => Ok((y / (1.0 - y)).ln()),
            Transform::Softplus if y > 0.0 => {
                // log(e^y - 1), stable for large and tiny y
                Ok(if y > 30.0 { y + (-(-y).exp()).ln_1p() } else { y.exp_m1().ln() })
            }
            _ => Err(Error::validation("parameter", format!("{y} outside the range of {self:?}"))),
        }
    }

    pub fn apply(self, tape: &mut Tape, latent: Var) -> Result<Var> {
        match self {
            Transform::Identity => Ok(latent),
            Transform::Sigmoid => tape.sigmoid(latent),
            Transform::Softplus => tape.softplus(latent),
        }
    }

    pub fn forward_matrix(self, m: &Matrix) -> Matrix {
        m.map(|x| self.forward(x))
    }

    pub fn inverse_matrix(self, m: &Matrix) -> Result<Matrix> {
        let data = m.data().iter().map(|&y| self.inverse(y)).collect::<Result<Vec<_>>>()?;
        Matrix::from_vec(m.rows(), m.cols(), data)
    }
}

/// Which learning-rate group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    /// Forecast model parameters (theta_1).
    Dynamics,
    /// Forecast-noise latents (theta_2).
    Noise,
    /// Gain parameters (phi).
    Filter,
}

impl Group {
    /// theta_1 and theta_2 share the theta learning rate.
    pub fn is_theta(self) -> bool {
        !matches!(self, Group::Filter)
    }
}

/// Declared shape and transform of a named parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub transform: Transform,
}

impl ParamSpec {
    pub fn new(name: &str, rows: usize, cols: usize, transform: Transform) -> Self {
        ParamSpec { name: name.to_string(), rows, cols, transform }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub transform: Transform,
    pub latent: Matrix,
}

impl Param {
    pub fn constrained(&self) -> Matrix {
        self.transform.forward_matrix(&self.latent)
    }
}

/// Ordered collection of learnable parameters, stored in latent space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    params: Vec<Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter from its constrained value.
    pub fn insert(&mut self, spec: &ParamSpec, group: Group, value: Matrix) -> Result<()> {
        if value.shape() != (spec.rows, spec.cols) {
            return Err(Error::Dim(format!(
                "{}: expected {}x{}, got {}x{}",
                spec.name,
                spec.rows,
                spec.cols,
                value.rows(),
                value.cols()
            )));
        }
        let latent = spec.transform.inverse_matrix(&value)?;
        self.insert_latent(&spec.name, group, spec.transform, latent);
        Ok(())
    }

    pub fn insert_latent(&mut self, name: &str, group: Group, transform: Transform, latent: Matrix) {
        let p = Param { name: name.to_string(), group, transform, latent };
        match self.params.iter_mut().find(|q| q.name == name) {
            Some(q) => *q = p,
            None => self.params.push(p),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn constrained(&self, name: &str) -> Result<Matrix> {
        self.get(name).map(Param::constrained).ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Records every latent as a leaf and its constrained value on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundParams> {
        let mut map = BTreeMap::new();
        for p in &self.params {
            let leaf = tape.leaf(p.latent.clone());
            let value = p.transform.apply(tape, leaf)?;
            map.insert(p.name.clone(), (leaf, value));
        }
        Ok(BoundParams { map })
    }

    /// Constrained values of the given specs, in order.
    pub fn values_for(&self, specs: &[ParamSpec]) -> Result<Vec<Matrix>> {
        specs.iter().map(|s| self.constrained(&s.name)).collect()
    }
}

/// Parameters recorded on a tape: latent leaf plus constrained node per name.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    map: BTreeMap<String, (Var, Var)>,
}

impl BoundParams {
    pub fn leaf(&self, name: &str) -> Result<Var> {
        self.map.get(name).map(|p| p.0).ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn value(&self, name: &str) -> Result<Var> {
        self.map.get(name).map(|p| p.1).ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    /// Constrained nodes for `specs`, in order.
    pub fn values_for(&self, specs: &[ParamSpec]) -> Result<Vec<Var>> {
        specs.iter().map(|s| self.value(&s.name)).collect()
    }

    pub fn leaves(&self) -> impl Iterator<Item = (&String, Var)> {
        self.map.iter().map(|(k, v)| (k, v.0))
    }
}
