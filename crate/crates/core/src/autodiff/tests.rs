use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::matrix::Matrix;

fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    // Small LCG so the fixtures do not depend on the rng crate.
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Matrix::from_fn(rows, cols, |_, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
    })
}

fn pd_matrix(n: usize, seed: u64) -> Matrix {
    let b = rand_matrix(n, n, seed);
    b.matmul(&b.transpose()).add(&Matrix::identity(n))
}

#[test]
fn matmul_identity() {
    let mut t = Tape::new();
    let i3 = t.constant(Matrix::identity(3));
    let m = rand_matrix(3, 4, 1);
    let mv = t.leaf(m.clone());
    let out = t.matmul(i3, mv).unwrap();
    assert_eq!(t.value(out), &m);
}

#[test]
fn logdet_of_scaled_identity() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::scaled_identity(3, 2.0));
    let ld = t.logdet_psd(x).unwrap();
    assert_relative_eq!(t.value(ld).item(), 3.0 * 2f64.ln(), epsilon = 1e-14);
    assert_relative_eq!(t.value(ld).item(), 2.07944, epsilon = 1e-5);
}

#[test]
fn sigmoid_softplus_at_zero() {
    let mut t = Tape::new();
    let z = t.leaf(Matrix::scalar(0.0));
    let s = t.sigmoid(z).unwrap();
    let sp = t.softplus(z).unwrap();
    assert_eq!(t.value(s).item(), 0.5);
    assert_relative_eq!(t.value(sp).item(), std::f64::consts::LN_2, epsilon = 1e-12);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::column(&[1.0, -2.0, 3.0]));
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_half_sumsq() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::column(&[1.0, 2.0]));
    let ss = t.reduce_sumsq(x).unwrap();
    let half = t.scale(ss, 0.5).unwrap();
    let g = t.backward(half).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn backward_of_logdet_is_inverse() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::scaled_identity(2, 2.0));
    let ld = t.logdet_psd(x).unwrap();
    let g = t.backward(ld).unwrap();
    assert!(g.get(x).unwrap().max_abs_diff(&Matrix::scaled_identity(2, 0.5)) < 1e-15);
}

#[test]
fn non_scalar_root_rejected() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::column(&[1.0, 2.0]));
    assert!(matches!(t.backward(x), Err(Error::NonScalarRoot { rows: 2, cols: 1 })));
}

#[test]
fn shape_errors() {
    let mut t = Tape::new();
    let a = t.leaf(Matrix::zeros(2, 3));
    let b = t.leaf(Matrix::zeros(2, 2));
    assert!(matches!(t.matmul(a, b), Err(Error::Shape { .. })));
    assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
    assert!(matches!(t.gather_rows(a, vec![5]), Err(Error::Shape { .. })));
    assert!(matches!(t.logdet_psd(a), Err(Error::Shape { .. })));
}

#[test]
fn non_pd_raises() {
    let mut t = Tape::new();
    let s = t.leaf(Matrix::scaled_identity(2, -1.0));
    assert!(matches!(t.logdet_psd(s), Err(Error::NotPositiveDefinite { .. })));
}

#[test]
fn gradcheck_sum_of_squares() {
    let x0 = rand_matrix(5, 1, 11);
    let err = grad_check(|t, v| t.reduce_sumsq(v[0]), &[x0], 1e-5).unwrap();
    assert!(err < 1e-7, "{err}");
}

#[test]
fn gradcheck_logdet_bbt_plus_i() {
    let b0 = rand_matrix(4, 4, 12);
    let f = |t: &mut Tape, v: &[Var]| {
        let bt = t.transpose(v[0])?;
        let bbt = t.matmul(v[0], bt)?;
        let i = t.constant(Matrix::identity(4));
        let s = t.add(bbt, i)?;
        t.logdet_psd(s)
    };
    let err = grad_check(f, &[b0], 1e-5).unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn gradcheck_constant_is_exact_zero() {
    let x0 = rand_matrix(3, 1, 13);
    let err = grad_check(|t, _| Ok(t.scalar(4.2)), &[x0], 1e-5).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn gradcheck_rejects_non_finite_probe() {
    let x0 = Matrix::column(&[0.0]);
    let res = grad_check(
        |t, v| {
            let r = t.reciprocal(v[0])?;
            t.sum(r)
        },
        &[x0],
        1e-5,
    );
    assert!(matches!(res, Err(Error::NonFiniteProbe { .. })));
}

#[test]
fn matmul_adjoint_3x4_times_4x2() {
    let a0 = rand_matrix(3, 4, 21);
    let b0 = rand_matrix(4, 2, 22);
    let w = rand_matrix(3, 2, 23);
    let f = |t: &mut Tape, v: &[Var]| {
        let p = t.matmul(v[0], v[1])?;
        let wv = t.constant(w.clone());
        let h = t.hadamard(p, wv)?;
        t.sum(h)
    };
    let report = grad_check_report(&f, &[a0.clone(), b0.clone()], 1e-6).unwrap();
    assert!(report.max_rel_error < 1e-8);
    // Closed form: A_bar = G B^T, B_bar = A^T G with G = w.
    assert!(report.analytic[0].max_abs_diff(&w.matmul(&b0.transpose())) < 1e-14);
    assert!(report.analytic[1].max_abs_diff(&a0.transpose().matmul(&w)) < 1e-14);
}

#[test]
fn gather_rows_scatters_exactly() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::from_fn(4, 2, |r, c| (r + c) as f64));
    let g = t.gather_rows(x, vec![3, 1, 3]).unwrap();
    let w = t.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
    let h = t.hadamard(g, w).unwrap();
    let s = t.sum(h).unwrap();
    let grads = t.backward(s).unwrap();
    let expected = Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 0.0], vec![6.0, 8.0]]).unwrap();
    assert_eq!(grads.get(x).unwrap(), &expected);
}

#[test]
fn cholesky_solve_residual() {
    for seed in 0..5 {
        let s = pd_matrix(6, 100 + seed);
        let y = rand_matrix(6, 3, 200 + seed);
        let mut t = Tape::new();
        let sv = t.constant(s.clone());
        let yv = t.constant(y.clone());
        let x = t.cholesky_solve_psd(sv, yv).unwrap();
        let resid = s.matmul(t.value(x)).sub(&y);
        assert!(resid.norm_inf() < 1e-8 * y.norm_inf());
    }
}

#[test]
fn replay_is_bit_identical() {
    let mut t = Tape::new();
    let a = t.leaf(rand_matrix(4, 4, 31));
    let s0 = t.leaf(pd_matrix(4, 32));
    let at = t.transpose(a).unwrap();
    let m = t.matmul(a, at).unwrap();
    let s = t.add(m, s0).unwrap();
    let y = t.gather_rows(a, vec![0, 1, 2, 3]).unwrap();
    let x = t.cholesky_solve_psd(s, y).unwrap();
    let e = t.sigmoid(x).unwrap();
    let ld = t.logdet_psd(s).unwrap();
    let tot = t.sum(e).unwrap();
    let _ = t.add(tot, ld).unwrap();
    assert!(t.replay_matches().unwrap());
}

#[test]
fn unused_leaf_gets_zero_adjoint() {
    let mut t = Tape::new();
    let x = t.leaf(Matrix::column(&[1.0]));
    let y = t.leaf(Matrix::column(&[1.0, 2.0]));
    let s = t.sum(x).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(y).unwrap(), &Matrix::zeros(2, 1));
}

/// Builds a scalar functional exercising one primitive on leaves drawn from
/// `[-2, 2]` (PD inputs as `B B^T + I`).
fn primitive_case(name: &str, seed: u64) -> (Vec<Matrix>, Box<dyn Fn(&mut Tape, &[Var]) -> crate::Result<Var>>) {
    let w32 = rand_matrix(3, 2, seed ^ 0xabc);
    let w33 = rand_matrix(3, 3, seed ^ 0xdef);
    let weigh = move |t: &mut Tape, v: Var, w: &Matrix| -> crate::Result<Var> {
        let wv = t.constant(w.clone());
        let h = t.hadamard(v, wv)?;
        t.sum(h)
    };
    let a = rand_matrix(3, 2, seed);
    let b = rand_matrix(3, 2, seed + 1);
    match name {
        "add" => (
            vec![a, b],
            Box::new(move |t, v| {
                let o = t.add(v[0], v[1])?;
                weigh(t, o, &w32)
            }),
        ),
        "sub" => (
            vec![a, b],
            Box::new(move |t, v| {
                let o = t.sub(v[0], v[1])?;
                weigh(t, o, &w32)
            }),
        ),
        "negate" => (
            vec![a],
            Box::new(move |t, v| {
                let o = t.negate(v[0])?;
                weigh(t, o, &w32)
            }),
        ),
        "scale" => (
            vec![a],
            Box::new(move |t, v| {
                let o = t.scale(v[0], -1.7)?;
                weigh(t, o, &w32)
            }),
        ),
        "mul_scalar" => (
            vec![a, Matrix::scalar(0.7)],
            Box::new(move |t, v| {
                let o = t.mul_scalar(v[0], v[1])?;
                weigh(t, o, &w32)
            }),
        ),
        "hadamard" => (
            vec![a, b],
            Box::new(move |t, v| {
                let o = t.hadamard(v[0], v[1])?;
                weigh(t, o, &w32)
            }),
        ),
        "matmul" => (
            vec![a, rand_matrix(2, 3, seed + 2)],
            Box::new(move |t, v| {
                let o = t.matmul(v[0], v[1])?;
                weigh(t, o, &w33)
            }),
        ),
        "transpose" => (
            vec![a],
            Box::new(move |t, v| {
                let o = t.transpose(v[0])?;
                let o = t.transpose(o)?;
                weigh(t, o, &w32)
            }),
        ),
        "reshape" => (
            vec![a],
            Box::new(move |t, v| {
                let o = t.reshape(v[0], 2, 3)?;
                let o = t.transpose(o)?;
                weigh(t, o, &w32)
            }),
        ),
        "gather_rows" => (
            vec![a],
            Box::new(move |t, v| {
                let o = t.gather_rows(v[0], vec![2, 0, 2])?;
                weigh(t, o, &w32)
            }),
        ),
        "concat_cols" => (
            vec![a, rand_matrix(3, 1, seed + 3)],
            Box::new(move |t, v| {
                let o = t.concat_cols(vec![v[0], v[1]])?;
                weigh(t, o, &w33)
            }),
        ),
        "sum" => (
            vec![a],
            Box::new(move |t, v| {
                let h = t.hadamard(v[0], v[0])?;
                t.sum(h)
            }),
        ),
        "mean" => (
            vec![a],
            Box::new(move |t, v| {
                let h = t.hadamard(v[0], v[0])?;
                t.mean(h)
            }),
        ),
        "reduce_sumsq" => (vec![a], Box::new(move |t, v| t.reduce_sumsq(v[0]))),
        "cholesky_solve_psd" => (
            vec![pd_matrix(3, seed + 4), a],
            Box::new(move |t, v| {
                let o = t.cholesky_solve_psd(v[0], v[1])?;
                weigh(t, o, &w32)
            }),
        ),
        "logdet_psd" => (vec![pd_matrix(3, seed + 5)], Box::new(move |t, v| t.logdet_psd(v[0]))),
        "sigmoid" => (
            vec![a],
            Box::new(move |t, v| {
                let o = t.sigmoid(v[0])?;
                weigh(t, o, &w32)
            }),
        ),
        "softplus" => (
            vec![a],
            Box::new(move |t, v| {
                let o = t.softplus(v[0])?;
                weigh(t, o, &w32)
            }),
        ),
        "abs" => (
            vec![a.map(|x| if x.abs() < 0.05 { 0.5 } else { x })],
            Box::new(move |t, v| {
                let o = t.abs(v[0])?;
                weigh(t, o, &w32)
            }),
        ),
        "exp" => (
            vec![a],
            Box::new(move |t, v| {
                let o = t.exp(v[0])?;
                weigh(t, o, &w32)
            }),
        ),
        "sqrt" => (
            vec![a.map(|x| x.abs() + 0.5)],
            Box::new(move |t, v| {
                let o = t.sqrt(v[0])?;
                weigh(t, o, &w32)
            }),
        ),
        "reciprocal" => (
            vec![a.map(|x| x.abs() + 0.5)],
            Box::new(move |t, v| {
                let o = t.reciprocal(v[0])?;
                weigh(t, o, &w32)
            }),
        ),
        other => panic!("no case for {other}"),
    }
}

const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "negate",
    "scale",
    "mul_scalar",
    "hadamard",
    "matmul",
    "transpose",
    "reshape",
    "gather_rows",
    "concat_cols",
    "sum",
    "mean",
    "reduce_sumsq",
    "cholesky_solve_psd",
    "logdet_psd",
    "sigmoid",
    "softplus",
    "abs",
    "exp",
    "sqrt",
    "reciprocal",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_primitive_matches_finite_differences(seed in 0u64..10_000) {
        for name in PRIMITIVES {
            let (x0, f) = primitive_case(name, seed);
            let err = grad_check(&f, &x0, 1e-6).unwrap();
            prop_assert!(err < 1e-5, "{} relative error {}", name, err);
        }
    }
}
