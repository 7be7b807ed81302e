use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::step::Observation;

/// Output of the exact Kalman filter.
#[derive(Clone, Debug)]
pub struct KalmanOutput {
    /// Analysis means `x_t`, `t = 1..T`.
    pub analyses: Vec<Matrix>,
    /// Joseph-form analysis covariances `P_{t|t}`.
    pub covariances: Vec<Matrix>,
    /// Forecast means `x^_t`.
    pub forecasts: Vec<Matrix>,
    /// Innovation covariances `H P_{t|t-1} H^T + R`.
    pub innovation_covs: Vec<Matrix>,
    /// `log N(y_t; H x^_t, S_t)` per step, 2 pi constant included.
    pub loglik_trace: Vec<f64>,
    pub loglik: f64,
}

/// Exact Kalman filter for the linear map `m` with row-selection observations.
pub fn kalman_filter(x0: &Matrix, p0: &Matrix, m: &Matrix, obs: &[Observation]) -> Result<KalmanOutput> {
    let d = x0.rows();
    if x0.cols() != 1 || p0.shape() != (d, d) || m.shape() != (d, d) {
        return Err(Error::Dim("Kalman filter expects x0 d x 1, P0 and transition d x d".into()));
    }
    let mt = m.transpose();
    let mut x = x0.clone();
    let mut p = p0.clone();
    let mut out = KalmanOutput {
        analyses: Vec::with_capacity(obs.len()),
        covariances: Vec::with_capacity(obs.len()),
        forecasts: Vec::with_capacity(obs.len()),
        innovation_covs: Vec::with_capacity(obs.len()),
        loglik_trace: Vec::with_capacity(obs.len()),
        loglik: 0.0,
    };
    for o in obs {
        let idx = &o.indices;
        let xf = m.matmul(&x);
        let pf = m.matmul(&p).matmul(&mt).symmetrized();

        let hp = pf.gather_rows(idx)?;
        let s = hp.transpose().gather_rows(idx)?.symmetrized().add(&o.r());
        let (l, _) = s.cholesky_psd()?;
        let k = Matrix::cholesky_solve_with(&l, &hp).transpose();

        let innov = o.column().sub(&xf.gather_rows(idx)?);
        let xa = xf.add(&k.matmul(&innov));

        let mut kh = Matrix::zeros(d, d);
        for (j, &c) in idx.iter().enumerate() {
            for i in 0..d {
                kh.set(i, c, kh.get(i, c) + k.get(i, j));
            }
        }
        let ikh = Matrix::identity(d).sub(&kh);
        let pa = ikh.matmul(&pf).matmul(&ikh.transpose()).add(&k.matmul(&o.r()).matmul(&k.transpose())).symmetrized();

        let w = Matrix::cholesky_solve_with(&l, &innov);
        let quad: f64 = innov.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        let logdet = 2.0 * (0..l.rows()).map(|i| l.get(i, i).ln()).sum::<f64>();
        let ll = -0.5 * (logdet + quad + o.dim() as f64 * (2.0 * PI).ln());
        if !ll.is_finite() {
            return Err(Error::NotPositiveDefinite { dim: o.dim() });
        }
        out.loglik += ll;
        out.loglik_trace.push(ll);
        out.analyses.push(xa.clone());
        out.covariances.push(pa.clone());
        out.forecasts.push(xf);
        out.innovation_covs.push(s);
        x = xa;
        p = pa;
    }
    Ok(out)
}
