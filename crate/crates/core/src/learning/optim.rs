use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::params::ParameterSet;

/// Adam with separate learning rates for `theta` (dynamics and noise) and
/// `phi` (gain) parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: HashMap<String, Matrix>,
    v: HashMap<String, Matrix>,
}

impl Adam {
    pub fn new(lr_theta: f64, lr_phi: f64) -> Self {
        Adam { lr_theta, lr_phi, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: HashMap::new(), v: HashMap::new() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn first_moment(&self, name: &str) -> Option<&Matrix> {
        self.m.get(name)
    }

    /// One update of every parameter with a gradient. A non-finite gradient
    /// anywhere skips the whole update, as does one whose square overflows
    /// (it would pin the second moment at infinity for good).
    pub fn step(&mut self, params: &mut ParameterSet, grads: &BTreeMap<String, Matrix>) -> Result<()> {
        for (name, g) in grads {
            if g.data().iter().any(|v| !(v * v).is_finite()) {
                return Err(Error::GradientBlowUp(name.clone()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for p in params.iter_mut() {
            let Some(g) = grads.get(&p.name) else { continue };
            let lr = if p.group.is_theta() { self.lr_theta } else { self.lr_phi };
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            let m = self.m.entry(p.name.clone()).or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self.v.entry(p.name.clone()).or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            for i in 0..g.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
                let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                p.latent.data_mut()[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn scale_rates(&mut self, factor: f64) {
        self.lr_theta *= factor;
        self.lr_phi *= factor;
    }
}

/// Multiplies both learning rates by `factor` once the validation loss has
/// failed to improve for `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    best: f64,
    bad_epochs: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        PlateauScheduler::new(5, 0.1)
    }
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> Self {
        PlateauScheduler { patience, factor, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch; returns true when the rates were reduced.
    pub fn step(&mut self, val_loss: f64, opt: &mut Adam) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            opt.scale_rates(self.factor);
            self.bad_epochs = 0;
            true
        } else {
            false
        }
    }
}
