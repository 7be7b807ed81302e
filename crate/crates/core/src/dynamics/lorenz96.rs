use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{standard_normal, Rng};

pub const L96_FORCING: f64 = 8.0;
pub const L96_DT: f64 = 0.05;
pub const POLY_TERMS: usize = 18;

/// Coefficients under which the polynomial model is exactly Lorenz-96 with
/// forcing 8.
pub fn true_poly_coefficients() -> [f64; POLY_TERMS] {
    let mut b = [0.0; POLY_TERMS];
    b[0] = L96_FORCING;
    b[3] = -1.0;
    b[11] = -1.0;
    b[16] = 1.0;
    b
}

fn check_dim(d: usize) -> Result<()> {
    if d < 4 {
        Err(Error::DimTooSmall { dim: d, min: 4 })
    } else {
        Ok(())
    }
}

/// Rows `i + k` (periodic) of `x`.
fn shifted(tape: &mut Tape, x: Var, k: isize) -> Result<Var> {
    let d = tape.shape(x).0 as isize;
    let idx = (0..d).map(|i| (i + k).rem_euclid(d) as usize).collect();
    tape.gather_rows(x, idx)
}

/// `dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F`, column-wise over an ensemble.
pub fn lorenz96_rhs(tape: &mut Tape, x: Var, forcing: f64) -> Result<Var> {
    let (d, n) = tape.shape(x);
    check_dim(d)?;
    let xp1 = shifted(tape, x, 1)?;
    let xm1 = shifted(tape, x, -1)?;
    let xm2 = shifted(tape, x, -2)?;
    let diff = tape.sub(xp1, xm2)?;
    let adv = tape.hadamard(diff, xm1)?;
    let out = tape.sub(adv, x)?;
    let f = tape.constant(Matrix::filled(d, n, forcing));
    tape.add(out, f)
}

pub fn lorenz96_rhs_values(x: &[f64], forcing: f64) -> Result<Vec<f64>> {
    let d = x.len();
    check_dim(d)?;
    let at = |i: isize| x[i.rem_euclid(d as isize) as usize];
    Ok((0..d as isize).map(|i| (at(i + 1) - at(i - 2)) * at(i - 1) - at(i) + forcing).collect())
}

/// Stacked polynomial features, `(d*N) x 18`, row `i*N + n` for component `i`
/// of member `n`. Column order: 1; x_{i-2}, x_{i-1}, x_i, x_{i+1}, x_{i+2};
/// their squares; then x_{i-2}x_{i-1}, x_{i-1}x_i, x_i x_{i+1},
/// x_{i+1}x_{i+2}, x_{i-2}x_i, x_{i-1}x_{i+1}, x_i x_{i+2}.
pub fn poly_basis(tape: &mut Tape, x: Var) -> Result<Var> {
    let (d, n) = tape.shape(x);
    check_dim(d)?;
    let mut s = Vec::with_capacity(5);
    for k in -2..=2 {
        s.push(if k == 0 { x } else { shifted(tape, x, k)? });
    }
    let pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 3), (2, 4)];
    let mut terms = vec![tape.constant(Matrix::filled(d, n, 1.0))];
    terms.extend_from_slice(&s);
    for &v in &s {
        terms.push(tape.hadamard(v, v)?);
    }
    for (a, b) in pairs {
        terms.push(tape.hadamard(s[a], s[b])?);
    }
    let cols = terms.into_iter().map(|t| tape.reshape(t, d * n, 1)).collect::<Result<Vec<_>>>()?;
    tape.concat_cols(cols)
}

/// Polynomial right-hand side: each component is the basis dotted with `beta`.
pub fn l96_poly_rhs(tape: &mut Tape, x: Var, beta: Var) -> Result<Var> {
    if tape.shape(beta) != (POLY_TERMS, 1) {
        let (r, c) = tape.shape(beta);
        return Err(Error::Dim(format!("polynomial coefficients must be {POLY_TERMS}x1, got {r}x{c}")));
    }
    let (d, n) = tape.shape(x);
    let phi = poly_basis(tape, x)?;
    let out = tape.matmul(phi, beta)?;
    tape.reshape(out, d, n)
}

pub fn l96_poly_rhs_values(x: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != POLY_TERMS {
        return Err(Error::Dim(format!("polynomial coefficients must have length {POLY_TERMS}, got {}", beta.len())));
    }
    let d = x.len();
    check_dim(d)?;
    let at = |i: isize| x[i.rem_euclid(d as isize) as usize];
    Ok((0..d as isize)
        .map(|i| {
            let s = [at(i - 2), at(i - 1), at(i), at(i + 1), at(i + 2)];
            let mut f = vec![1.0];
            f.extend_from_slice(&s);
            f.extend(s.iter().map(|v| v * v));
            f.extend([s[0] * s[1], s[1] * s[2], s[2] * s[3], s[3] * s[4], s[0] * s[2], s[1] * s[3], s[2] * s[4]]);
            f.iter().zip(beta).map(|(a, b)| a * b).sum()
        })
        .collect())
}

/// Imperfect coefficients: variance `sigma0_sq` on the constant, a tenth of it
/// on the linear terms and a hundredth on the quadratic ones.
pub fn sample_imperfect_l96(beta_star: &[f64], sigma0_sq: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if beta_star.len() != POLY_TERMS {
        return Err(Error::Dim(format!("expected {POLY_TERMS} coefficients, got {}", beta_star.len())));
    }
    if !(sigma0_sq >= 0.0) {
        return Err(Error::validation("sigma0_sq", "variance must be non-negative"));
    }
    Ok(beta_star
        .iter()
        .enumerate()
        .map(|(m, b)| {
            let tier = match m {
                0 => 1.0,
                1..=5 => 0.1,
                _ => 0.01,
            };
            b + (tier * sigma0_sq).sqrt() * standard_normal(rng)
        })
        .collect())
}
