use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// True mean orbital rate.
pub const CW_RATE: f64 = 0.0013;
/// Time between observations.
pub const CW_DT: f64 = 10.0;
/// True initial state `[x1, x2, x3, x1', x2', x3']`.
pub const CW_X0: [f64; 6] = [1.0, 0.5, 1.0, -0.001375, -0.000275, -0.001375];

fn pattern(entries: &[(usize, usize, f64)]) -> Matrix {
    let mut m = Matrix::zeros(6, 6);
    for &(r, c, v) in entries {
        m.set(r, c, v);
    }
    m
}

fn patterns() -> [Matrix; 3] {
    [
        pattern(&[(0, 3, 1.0), (1, 4, 1.0), (2, 5, 1.0)]),
        pattern(&[(3, 4, 2.0), (4, 3, -2.0)]),
        pattern(&[(3, 0, 3.0), (5, 2, -1.0)]),
    ]
}

/// First-order Clohessy-Wiltshire system matrix for rate `theta` (`1 x 1`).
pub fn cw_matrix(tape: &mut Tape, theta: Var) -> Result<Var> {
    if tape.shape(theta) != (1, 1) {
        return Err(Error::Dim("orbital rate must be 1x1".into()));
    }
    let [p0, p1, p2] = patterns();
    let p0 = tape.constant(p0);
    let p1 = tape.constant(p1);
    let p2 = tape.constant(p2);
    let sq = tape.hadamard(theta, theta)?;
    let lin = tape.mul_scalar(p1, theta)?;
    let quad = tape.mul_scalar(p2, sq)?;
    let f = tape.add(p0, lin)?;
    tape.add(f, quad)
}

pub fn cw_matrix_values(theta: f64) -> Matrix {
    let [p0, p1, p2] = patterns();
    p0.add(&p1.scale(theta)).add(&p2.scale(theta * theta))
}

const TAYLOR_TOL: f64 = 1e-15;
const MAX_TERMS: usize = 60;

/// `exp(F dt)` by scaling and squaring around a truncated Taylor series, all
/// recorded on the tape.
pub fn matrix_exp(tape: &mut Tape, f: Var, dt: f64) -> Result<Var> {
    let (n, m) = tape.shape(f);
    if n != m {
        return Err(Error::shape("matrix_exp", format!("square matrix required, got {n}x{m}")));
    }
    if !tape.value(f).is_finite() {
        return Err(Error::BlowUp { context: "matrix exponential" });
    }
    let norm = tape.value(f).norm_1_rows() * dt.abs();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let a = tape.scale(f, dt / 2f64.powi(squarings))?;

    let mut sum = tape.constant(Matrix::identity(n));
    let mut term = sum;
    for k in 1..=MAX_TERMS {
        let next = tape.matmul(term, a)?;
        term = tape.scale(next, 1.0 / k as f64)?;
        sum = tape.add(sum, term)?;
        if tape.value(term).norm_inf() < TAYLOR_TOL {
            break;
        }
    }
    for _ in 0..squarings {
        sum = tape.matmul(sum, sum)?;
    }
    Ok(sum)
}

pub fn matrix_exp_values(f: &Matrix, dt: f64) -> Result<Matrix> {
    let mut tape = Tape::new();
    let v = tape.constant(f.clone());
    let e = matrix_exp(&mut tape, v, dt)?;
    Ok(tape.value(e).clone())
}

/// One-interval transition matrix of the CW flow.
pub fn cw_transition(theta: f64, dt: f64) -> Result<Matrix> {
    matrix_exp_values(&cw_matrix_values(theta), dt)
}
