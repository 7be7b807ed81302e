use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded primitive together with its inputs and attributes.
#[derive(Clone, Debug)]
pub enum Op {
    /// Differentiable input.
    Leaf,
    /// Non-differentiable input.
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Negate(Var),
    /// Multiplication by a fixed real.
    Scale(Var, f64),
    /// Matrix times a `1 x 1` node.
    MulScalar(Var, Var),
    Hadamard(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    /// Same row-major data under a new shape.
    Reshape(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    ReduceSumSq(Var),
    /// `S^{-1} Y` for symmetric positive definite `S`. Only the symmetric
    /// part `(S + S^T)/2` is read, and its adjoint is symmetric.
    CholeskySolvePsd(Var, Var),
    /// `log det` of the symmetric part of a positive definite matrix.
    LogDetPsd(Var),
    Sigmoid(Var),
    Softplus(Var),
    Abs(Var),
    Exp(Var),
    Sqrt(Var),
    Reciprocal(Var),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Negate(_) => "negate",
            Op::Scale(..) => "scale",
            Op::MulScalar(..) => "mul_scalar",
            Op::Hadamard(..) => "hadamard",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::ReduceSumSq(_) => "reduce_sumsq",
            Op::CholeskySolvePsd(..) => "cholesky_solve_psd",
            Op::LogDetPsd(_) => "logdet_psd",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Abs(_) => "abs",
            Op::Exp(_) => "exp",
            Op::Sqrt(_) => "sqrt",
            Op::Reciprocal(_) => "reciprocal",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::MulScalar(a, b)
            | Op::Hadamard(a, b)
            | Op::MatMul(a, b)
            | Op::CholeskySolvePsd(a, b) => vec![*a, *b],
            Op::Negate(a)
            | Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a, ..)
            | Op::GatherRows(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::ReduceSumSq(a)
            | Op::LogDetPsd(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Abs(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Reciprocal(a) => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    /// Cholesky factor of the (jittered) input for the PSD primitives.
    factor: Option<Matrix>,
}

/// Append-only record of a computation over dense matrices.
///
/// Parents always precede their children, so a reverse sweep over the node
/// list is a valid topological order for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the leaves of a tape with respect to a scalar root.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<Var, Matrix>,
}

impl Gradients {
    pub fn get(&self, leaf: Var) -> Option<&Matrix> {
        self.by_leaf.get(&leaf)
    }

    pub fn take(&mut self, leaf: Var) -> Option<Matrix> {
        self.by_leaf.remove(&leaf)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Matrix)> {
        self.by_leaf.iter()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    pub fn leaves(&self) -> Vec<Var> {
        (0..self.nodes.len()).map(Var).filter(|v| self.is_leaf(*v)).collect()
    }

    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.parents()
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, None)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, None)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::scalar(value))
    }

    fn push(&mut self, value: Matrix, op: Op, factor: Option<Matrix>) -> Var {
        self.nodes.push(Node { value, op, factor });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `op` against the current node values and appends the result.
    pub fn record(&mut self, op: Op) -> Result<Var> {
        if matches!(op, Op::Leaf | Op::Constant) {
            return Err(Error::shape("record", "leaves and constants carry their own values"));
        }
        for p in op.parents() {
            if p.0 >= self.nodes.len() {
                return Err(Error::shape(op.name(), format!("unknown input node {}", p.0)));
            }
        }
        let (value, factor) = eval_op(&op, |v| &self.nodes[v.0].value)?;
        Ok(self.push(value, op, factor))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn negate(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Negate(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.record(Op::Scale(a, s))
    }

    pub fn mul_scalar(&mut self, m: Var, s: Var) -> Result<Var> {
        self.record(Op::MulScalar(m, s))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Hadamard(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        self.record(Op::Reshape(a, rows, cols))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        self.record(Op::GatherRows(a, idx))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Result<Var> {
        self.record(Op::ConcatCols(parts))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Mean(a))
    }

    pub fn reduce_sumsq(&mut self, a: Var) -> Result<Var> {
        self.record(Op::ReduceSumSq(a))
    }

    pub fn cholesky_solve_psd(&mut self, s: Var, y: Var) -> Result<Var> {
        self.record(Op::CholeskySolvePsd(s, y))
    }

    pub fn logdet_psd(&mut self, s: Var) -> Result<Var> {
        self.record(Op::LogDetPsd(s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Softplus(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Abs(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Exp(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sqrt(a))
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Reciprocal(a))
    }

    /// `a * c^T`-style broadcast of a column `v` (`n x 1`) across `cols` columns.
    pub fn broadcast_cols(&mut self, v: Var, cols: usize) -> Result<Var> {
        let ones = self.constant(Matrix::filled(1, cols, 1.0));
        self.matmul(v, ones)
    }

    /// Mean over columns (`n x k -> n x 1`).
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let k = self.shape(a).1;
        let w = self.constant(Matrix::filled(k, 1, 1.0 / k as f64));
        self.matmul(a, w)
    }

    /// `(S + S^T) / 2`.
    pub fn symmetrize(&mut self, s: Var) -> Result<Var> {
        let t = self.transpose(s)?;
        let sum = self.add(s, t)?;
        self.scale(sum, 0.5)
    }

    /// Recomputes every non-input node from its recorded op and inputs.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf | Op::Constant => node.value.clone(),
                ref op => eval_op(op, |v| &values[v.0])?.0,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// True when [`Tape::replay`] reproduces every stored value bit for bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(replayed.iter().zip(&self.nodes).all(|(r, n)| {
            r.shape() == n.value.shape() && r.data().iter().zip(n.value.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        }))
    }

    /// Reverse sweep from a `1 x 1` root; returns the adjoint of every leaf.
    /// Leaves that do not influence the root get a zero adjoint.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let (rows, cols) = self.shape(root);
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::Constant => {}
                op => self.propagate(op, node, &g, &mut adj),
            }
        }

        let mut by_leaf = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                let g = adj
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                by_leaf.insert(Var(i), g);
            }
        }
        Ok(Gradients { by_leaf })
    }

    fn propagate(&self, op: &Op, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contribution: Matrix| match &mut adj[v.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        };
        match op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Negate(a) => acc(*a, g.scale(-1.0)),
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::MulScalar(m, s) => {
                let sv = val(s).item();
                let ds: f64 = g.data().iter().zip(val(m).data()).map(|(x, y)| x * y).sum();
                acc(*m, g.scale(sv));
                acc(*s, Matrix::scalar(ds));
            }
            Op::Hadamard(a, b) => {
                acc(*a, g.zip_map(val(b), |x, y| x * y));
                acc(*b, g.zip_map(val(a), |x, y| x * y));
            }
            Op::MatMul(a, b) => {
                acc(*a, g.matmul(&val(b).transpose()));
                acc(*b, val(a).transpose().matmul(g));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Reshape(a, ..) => {
                let (r, c) = val(a).shape();
                acc(*a, g.clone().reshaped(r, c).expect("reshape adjoint"));
            }
            Op::GatherRows(a, idx) => {
                let src = val(a);
                let mut out = Matrix::zeros(src.rows(), src.cols());
                let cols = src.cols();
                for (k, &row) in idx.iter().enumerate() {
                    for c in 0..cols {
                        let cur = out.get(row, c);
                        out.set(row, c, cur + g.get(k, c));
                    }
                }
                acc(*a, out);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, c) = val(p).shape();
                    let piece = Matrix::from_fn(r, c, |i, j| g.get(i, offset + j));
                    offset += c;
                    acc(*p, piece);
                }
            }
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                acc(*a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = val(a).shape();
                acc(*a, Matrix::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::ReduceSumSq(a) => acc(*a, val(a).scale(2.0 * g.item())),
            Op::CholeskySolvePsd(s, y) => {
                let l = node.factor.as_ref().expect("factor stored at record time");
                let y_bar = Matrix::cholesky_solve_with(l, g);
                let s_bar = y_bar.matmul(&node.value.transpose()).scale(-1.0).symmetrized();
                acc(*s, s_bar);
                acc(*y, y_bar);
            }
            Op::LogDetPsd(s) => {
                let l = node.factor.as_ref().expect("factor stored at record time");
                let inv = Matrix::cholesky_solve_with(l, &Matrix::identity(l.rows()));
                acc(*s, inv.symmetrized().scale(g.item()));
            }
            Op::Sigmoid(a) => {
                acc(*a, g.zip_map(&node.value, |x, s| x * s * (1.0 - s)));
            }
            Op::Softplus(a) => acc(*a, g.zip_map(val(a), |x, v| x * sigmoid(v))),
            Op::Abs(a) => acc(*a, g.zip_map(val(a), |x, v| x * sign(v))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, e| x * e)),
            Op::Sqrt(a) => acc(*a, g.zip_map(&node.value, |x, r| x * 0.5 / r)),
            Op::Reciprocal(a) => acc(*a, g.zip_map(&node.value, |x, r| -x * r * r)),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols())));
    }
    Ok(())
}

fn square(op: &'static str, a: &Matrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::shape(op, format!("{}x{} is not square", a.rows(), a.cols())));
    }
    Ok(())
}

/// Forward rule of every primitive. Shared by recording and replay so both
/// produce identical bits.
fn eval_op<'a>(op: &Op, val: impl Fn(Var) -> &'a Matrix) -> Result<(Matrix, Option<Matrix>)> {
    let out = match op {
        Op::Leaf | Op::Constant => unreachable!("inputs are not evaluated"),
        Op::Add(a, b) => {
            same_shape("add", val(*a), val(*b))?;
            val(*a).add(val(*b))
        }
        Op::Sub(a, b) => {
            same_shape("sub", val(*a), val(*b))?;
            val(*a).sub(val(*b))
        }
        Op::Negate(a) => val(*a).scale(-1.0),
        Op::Scale(a, s) => val(*a).scale(*s),
        Op::MulScalar(m, s) => {
            let sv = val(*s);
            if sv.shape() != (1, 1) {
                return Err(Error::shape("mul_scalar", "scale factor must be 1x1"));
            }
            val(*m).scale(sv.item())
        }
        Op::Hadamard(a, b) => val(*a).try_hadamard(val(*b))?,
        Op::MatMul(a, b) => val(*a).try_matmul(val(*b))?,
        Op::Transpose(a) => val(*a).transpose(),
        Op::Reshape(a, r, c) => val(*a).clone().reshaped(*r, *c)?,
        Op::GatherRows(a, idx) => val(*a).gather_rows(idx)?,
        Op::ConcatCols(parts) => {
            if parts.is_empty() {
                return Err(Error::shape("concat_cols", "no inputs"));
            }
            let mats: Vec<&Matrix> = parts.iter().map(|p| val(*p)).collect();
            Matrix::hconcat(&mats)?
        }
        Op::Sum(a) => Matrix::scalar(val(*a).sum()),
        Op::Mean(a) => {
            let m = val(*a);
            if m.is_empty() {
                return Err(Error::shape("mean", "empty input"));
            }
            Matrix::scalar(m.sum() / m.len() as f64)
        }
        Op::ReduceSumSq(a) => Matrix::scalar(val(*a).data().iter().map(|v| v * v).sum()),
        Op::CholeskySolvePsd(s, y) => {
            let (sm, ym) = (val(*s), val(*y));
            square("cholesky_solve_psd", sm)?;
            if ym.rows() != sm.rows() {
                return Err(Error::shape(
                    "cholesky_solve_psd",
                    format!("{}x{} \\ {}x{}", sm.rows(), sm.cols(), ym.rows(), ym.cols()),
                ));
            }
            let (l, _) = sm.symmetrized().cholesky_psd()?;
            let x = Matrix::cholesky_solve_with(&l, ym);
            return Ok((x, Some(l)));
        }
        Op::LogDetPsd(s) => {
            let sm = val(*s);
            square("logdet_psd", sm)?;
            let (l, _) = sm.symmetrized().cholesky_psd()?;
            let ld: f64 = (0..l.rows()).map(|i| 2.0 * l.get(i, i).ln()).sum();
            return Ok((Matrix::scalar(ld), Some(l)));
        }
        Op::Sigmoid(a) => val(*a).map(sigmoid),
        Op::Softplus(a) => val(*a).map(softplus),
        Op::Abs(a) => val(*a).map(f64::abs),
        Op::Exp(a) => val(*a).map(f64::exp),
        Op::Sqrt(a) => val(*a).map(f64::sqrt),
        Op::Reciprocal(a) => val(*a).map(f64::recip),
    };
    Ok((out, None))
}
