use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::tape::{Tape, Var};

/// Outcome of comparing reverse-mode adjoints with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat entry index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: Vec<Matrix>,
    pub numeric: Vec<Matrix>,
}

/// Entrywise `|a - n| / max(1, |n|)`, maximized over all inputs.
pub fn compare_gradients(analytic: &[Matrix], numeric: &[Matrix]) -> (f64, (usize, usize)) {
    let mut worst = (0.0, (0, 0));
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (j, (ga, gn)) in a.data().iter().zip(n.data()).enumerate() {
            let err = (ga - gn).abs() / gn.abs().max(1.0);
            if err > worst.0 || err.is_nan() {
                worst = (err, (k, j));
            }
        }
    }
    worst
}

fn evaluate<F>(f: &F, inputs: &[Matrix], probe: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let value = tape.value(root).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteProbe { index: probe, value });
    }
    Ok(value)
}

/// Central finite differences of a scalar tape function.
pub fn finite_differences<F>(f: &F, x0: &[Matrix], eps: f64) -> Result<Vec<Matrix>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut probe = 0;
    let mut out = Vec::with_capacity(x0.len());
    for (k, m) in x0.iter().enumerate() {
        let mut g = Matrix::zeros(m.rows(), m.cols());
        for j in 0..m.len() {
            let mut plus = x0.to_vec();
            plus[k].data_mut()[j] += eps;
            let fp = evaluate(f, &plus, probe)?;
            probe += 1;
            let mut minus = x0.to_vec();
            minus[k].data_mut()[j] -= eps;
            let fm = evaluate(f, &minus, probe)?;
            probe += 1;
            g.data_mut()[j] = (fp - fm) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Adjoints of `f` at `x0` via a single reverse sweep.
pub fn reverse_gradients<F>(f: &F, x0: &[Matrix]) -> Result<Vec<Matrix>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = x0.iter().map(|m| tape.leaf(m.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let value = tape.value(root).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteProbe { index: 0, value });
    }
    let mut grads = tape.backward(root)?;
    Ok(vars.iter().map(|v| grads.take(*v).expect("leaf adjoint")).collect())
}

/// Full report: analytic and numeric gradients plus the worst relative error.
pub fn grad_check_report<F>(f: &F, x0: &[Matrix], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::validation("eps", "finite-difference step must be positive"));
    }
    let analytic = reverse_gradients(f, x0)?;
    let numeric = finite_differences(f, x0, eps)?;
    let (max_rel_error, worst) = compare_gradients(&analytic, &numeric);
    Ok(GradCheckReport { max_rel_error, worst, analytic, numeric })
}

/// Max over entries of `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn grad_check<F>(f: F, x0: &[Matrix], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_report(&f, x0, eps).map(|r| r.max_rel_error)
}
