use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::filters::{ForecastStats, Observation};

fn residual(tape: &mut Tape, st: &ForecastStats, o: &Observation) -> Result<Var> {
    let y = tape.constant(o.column());
    let hm = tape.gather_rows(st.mean, o.indices.clone())?;
    tape.sub(y, hm)
}

/// Negative forecast log-likelihood over a window, without the `2 pi` term:
/// `sum_t 1/2 log det S_t + 1/2 r_t^T S_t^{-1} r_t` with `r_t = y_t - H_t m_t`.
pub fn nll_loss(tape: &mut Tape, stats: &[ForecastStats], obs: &[Observation]) -> Result<Var> {
    if stats.len() != obs.len() || stats.is_empty() {
        return Err(Error::Dim("loss needs one observation per forecast".into()));
    }
    let mut terms = Vec::with_capacity(stats.len());
    for (st, o) in stats.iter().zip(obs) {
        let r = residual(tape, st, o)?;
        let w = tape.cholesky_solve_psd(st.s, r)?;
        let rt = tape.transpose(r)?;
        let quad = tape.matmul(rt, w)?;
        let ld = tape.logdet_psd(st.s)?;
        let t = tape.add(ld, quad)?;
        terms.push(tape.scale(t, 0.5)?);
    }
    let all = tape.concat_cols(terms)?;
    tape.sum(all)
}

/// Mean squared one-step forecast residual `1/T sum_t ||y_t - H F(x_{t-1})||^2`.
pub fn loss_3dvar_k(tape: &mut Tape, stats: &[ForecastStats], obs: &[Observation]) -> Result<Var> {
    if stats.len() != obs.len() || stats.is_empty() {
        return Err(Error::Dim("loss needs one observation per forecast".into()));
    }
    let dy = obs[0].dim();
    let mut terms = Vec::with_capacity(stats.len());
    for (st, o) in stats.iter().zip(obs) {
        if o.dim() != dy {
            return Err(Error::StaticObservationRequired);
        }
        let r = residual(tape, st, o)?;
        terms.push(tape.reduce_sumsq(r)?);
    }
    let all = tape.concat_cols(terms)?;
    tape.mean(all)
}
