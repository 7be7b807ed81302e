use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const GLV_BLOCKS: usize = 4;
pub const GLV_PARAMS: usize = 10;

/// True block parameters `a_1..a_10`.
pub fn true_block_params() -> [f64; GLV_PARAMS] {
    [0.1, 0.05, 0.01, -0.04, 0.1, 0.05, 0.01, 0.1, 0.05, 0.1]
}

/// Unordered group pairs `(g, h)`, `g <= h`, in row-major order; pair `k`
/// carries parameter `a_{k+1}`.
pub fn block_pairs() -> [(usize, usize); GLV_PARAMS] {
    let mut out = [(0, 0); GLV_PARAMS];
    let mut k = 0;
    for g in 0..GLV_BLOCKS {
        for h in g..GLV_BLOCKS {
            out[k] = (g, h);
            k += 1;
        }
    }
    out
}

/// Sign of parameter `(g, h)` in block `(g, h)`: `+` above the diagonal, `-`
/// below, and `-` on diagonal blocks so that `a > 0` is self-limiting.
fn block_sign(g: usize, h: usize) -> f64 {
    if g < h {
        1.0
    } else {
        -1.0
    }
}

/// `16 x 10` map from the parameters to the row-major `4 x 4` block matrix.
fn block_pattern() -> Matrix {
    let mut p = Matrix::zeros(GLV_BLOCKS * GLV_BLOCKS, GLV_PARAMS);
    for (k, (g, h)) in block_pairs().into_iter().enumerate() {
        p.set(g * GLV_BLOCKS + h, k, block_sign(g, h));
        if g != h {
            p.set(h * GLV_BLOCKS + g, k, block_sign(h, g));
        }
    }
    p
}

fn check_params(len: usize) -> Result<()> {
    if len != GLV_PARAMS {
        return Err(Error::Dim(format!("expected {GLV_PARAMS} block parameters, got {len}")));
    }
    Ok(())
}

/// `4 x 4` group-level interaction matrix from a `10 x 1` parameter node.
pub fn block_core(tape: &mut Tape, a: Var) -> Result<Var> {
    if tape.shape(a) != (GLV_PARAMS, 1) {
        return Err(Error::Dim(format!("block parameters must be {GLV_PARAMS}x1")));
    }
    let p = tape.constant(block_pattern());
    let flat = tape.matmul(p, a)?;
    tape.reshape(flat, GLV_BLOCKS, GLV_BLOCKS)
}

/// `d x 4` membership matrix of the contiguous equal species groups.
pub fn group_indicator(d: usize) -> Result<Matrix> {
    if d == 0 || !d.is_multiple_of(GLV_BLOCKS) {
        return Err(Error::Dim(format!("species count {d} must be a positive multiple of {GLV_BLOCKS}")));
    }
    let size = d / GLV_BLOCKS;
    Ok(Matrix::from_fn(d, GLV_BLOCKS, |i, g| if i / size == g { 1.0 } else { 0.0 }))
}

/// Dense `d x d` interaction matrix with group-constant blocks.
pub fn build_block_a(a: &[f64], d: usize) -> Result<Matrix> {
    check_params(a.len())?;
    let e = group_indicator(d)?;
    let core = block_pattern().matmul(&Matrix::column(a)).reshaped(GLV_BLOCKS, GLV_BLOCKS)?;
    Ok(e.matmul(&core).matmul(&e.transpose()))
}

/// `x_i (r + A x)_i`, column-wise over an ensemble; `r` is `d x 1`.
pub fn glv_rhs(tape: &mut Tape, x: Var, a: Var, r: Var) -> Result<Var> {
    let n = tape.shape(x).1;
    let ax = tape.matmul(a, x)?;
    let rb = tape.broadcast_cols(r, n)?;
    let f = tape.add(rb, ax)?;
    tape.hadamard(x, f)
}

pub fn glv_rhs_values(x: &[f64], a: &Matrix, r: &[f64]) -> Result<Vec<f64>> {
    if a.shape() != (x.len(), x.len()) || r.len() != x.len() {
        return Err(Error::Dim("interaction matrix, rates and state must agree in size".into()));
    }
    let ax = a.matmul(&Matrix::column(x));
    Ok(x.iter().zip(r).zip(ax.data()).map(|((xi, ri), axi)| xi * (ri + axi)).collect())
}

/// `r = -A x_s`, the rates that make `x_s` a steady state.
pub fn glv_rate_from_steady_state(a: &Matrix, xs: &[f64]) -> Result<Vec<f64>> {
    if a.shape() != (xs.len(), xs.len()) {
        return Err(Error::Dim("interaction matrix and steady state must agree in size".into()));
    }
    Ok(a.matmul(&Matrix::column(xs)).data().iter().map(|v| -v).collect())
}
