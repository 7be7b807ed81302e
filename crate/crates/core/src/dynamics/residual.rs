use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::learning::{ParamSpec, Transform};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// Circular 1-D convolutional correction `G(x)` acting on each member of an
/// ensemble: channels `1 -> C -> C -> 1`, odd kernel width, GELU between
/// layers. Weights are shared along the ring, so the parameter count does not
/// depend on the state dimension and the map commutes with circular shifts.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualNet {
    pub channels: usize,
    pub kernel: usize,
}

impl Default for ResidualNet {
    fn default() -> Self {
        ResidualNet { channels: 32, kernel: 5 }
    }
}

impl ResidualNet {
    pub fn new(channels: usize, kernel: usize) -> Result<Self> {
        if channels == 0 || kernel.is_multiple_of(2) {
            return Err(Error::validation("residual_net", "need at least one channel and an odd kernel width"));
        }
        Ok(ResidualNet { channels, kernel })
    }

    fn layers(&self) -> [(usize, usize); 3] {
        [(1, self.channels), (self.channels, self.channels), (self.channels, 1)]
    }

    /// `net_w{l}` is `(kernel * c_in) x c_out`, `net_b{l}` is `1 x c_out`.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for (l, (cin, cout)) in self.layers().into_iter().enumerate() {
            out.push(ParamSpec::new(&format!("net_w{}", l + 1), self.kernel * cin, cout, Transform::Identity));
            out.push(ParamSpec::new(&format!("net_b{}", l + 1), 1, cout, Transform::Identity));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|s| s.rows * s.cols).sum()
    }

    /// Uniform `+-1/sqrt(fan_in)` for the hidden layers; the output layer is
    /// zero so the corrected model starts exactly at the base flow.
    pub fn init(&self, rng: &mut Rng) -> Vec<Matrix> {
        let specs = self.param_specs();
        let last = specs.len() - 2;
        specs
            .iter()
            .enumerate()
            .map(|(k, s)| {
                if k >= last {
                    return Matrix::zeros(s.rows, s.cols);
                }
                let fan_in = self.kernel * self.layers()[k / 2].0;
                let bound = 1.0 / (fan_in as f64).sqrt();
                Matrix::from_fn(s.rows, s.cols, |_, _| rng.random_range(-bound..bound))
            })
            .collect()
    }

    fn gelu(tape: &mut Tape, h: Var) -> Result<Var> {
        let z = tape.scale(h, 1.702)?;
        let g = tape.sigmoid(z)?;
        tape.hadamard(h, g)
    }

    /// `G(x)` for a `d x N` ensemble; `weights` in [`Self::param_specs`] order.
    pub fn forward(&self, tape: &mut Tape, weights: &[Var], x: Var) -> Result<Var> {
        if weights.len() != 6 {
            return Err(Error::Dim(format!("residual net expects 6 weight tensors, got {}", weights.len())));
        }
        let (d, n) = tape.shape(x);
        let rows = d * n;
        let half = (self.kernel / 2) as isize;
        let shifts: Vec<Vec<usize>> = (-half..=half)
            .map(|o| {
                (0..rows)
                    .map(|r| {
                        let (m, i) = (r / d, (r % d) as isize);
                        m * d + (i + o).rem_euclid(d as isize) as usize
                    })
                    .collect()
            })
            .collect();
        // member-major column: row m*d + i holds component i of member m
        let xt = tape.transpose(x)?;
        let mut h = tape.reshape(xt, rows, 1)?;
        let ones = tape.constant(Matrix::filled(rows, 1, 1.0));
        for l in 0..3 {
            let cols = shifts.iter().map(|idx| tape.gather_rows(h, idx.clone())).collect::<Result<Vec<_>>>()?;
            let patches = tape.concat_cols(cols)?;
            let lin = tape.matmul(patches, weights[2 * l])?;
            let bias = tape.matmul(ones, weights[2 * l + 1])?;
            h = tape.add(lin, bias)?;
            if l < 2 {
                h = Self::gelu(tape, h)?;
            }
        }
        let out = tape.reshape(h, n, d)?;
        tape.transpose(out)
    }
}
