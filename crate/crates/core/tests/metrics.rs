use adfilter_core::metrics::{filter_rmse, forecast_rmse_values, gaussian_loglik, median, param_mae, LoglikTrace};
use adfilter_core::Matrix;
use approx::assert_relative_eq;

#[test]
fn forecast_rmse_example() {
    let pred = Matrix::column(&[3.0, 4.0]);
    let truth = Matrix::zeros(2, 1);
    assert_relative_eq!(forecast_rmse_values(&pred, &truth).unwrap(), 5.0 / 2f64.sqrt(), epsilon = 1e-15);
    assert!(forecast_rmse_values(&pred, &Matrix::zeros(3, 1)).is_err());
}

#[test]
fn filter_rmse_of_constant_offset() {
    let truth: Vec<Matrix> = (0..10).map(|t| Matrix::column(&[t as f64, -1.0, 2.0])).collect();
    let shifted: Vec<Matrix> = truth.iter().map(|x| x.map(|v| v + 0.3)).collect();
    assert_relative_eq!(filter_rmse(&shifted, &truth).unwrap(), 0.3, epsilon = 1e-14);
    assert!(filter_rmse(&shifted[..3], &truth).is_err());
}

#[test]
fn parameter_mae() {
    assert_relative_eq!(param_mae(&[1.0, 2.0, 3.0], &[1.5, 2.0, 2.0]).unwrap(), 0.5);
    assert_eq!(param_mae(&[0.1; 4], &[0.1; 4]).unwrap(), 0.0);
    assert!(param_mae(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn standard_normal_density_at_zero() {
    let t = gaussian_loglik(&Matrix::zeros(1, 1), &Matrix::identity(1)).unwrap();
    assert_relative_eq!(t.total, -0.918_938_533_204_672_7, epsilon = 1e-14);
    assert_eq!(t.logdet, 0.0);
}

#[test]
fn loglik_terms_add_up() {
    let s = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
    let r = Matrix::column(&[0.4, -1.1]);
    let t = gaussian_loglik(&r, &s).unwrap();
    let det: f64 = 2.0 - 0.09;
    let quad = (1.0 * 0.16 - 2.0 * 0.3 * 0.4 * -1.1 + 2.0 * 1.21) / det;
    assert_relative_eq!(t.logdet, -0.5 * det.ln(), epsilon = 1e-14);
    assert_relative_eq!(t.residual, -0.5 * quad, epsilon = 1e-14);
    assert_relative_eq!(t.total, t.logdet + t.residual - (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-14);
}

#[test]
fn medians() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, f64::INFINITY, 2.0]), 3.0);
    assert!(median(&[]).is_nan());
}

#[test]
fn traces_average_and_serialize() {
    let mk = |v: f64| LoglikTrace { loglik: vec![v, 2.0 * v], logdet: vec![0.0; 2], residual: vec![v, 2.0 * v] };
    let avg = LoglikTrace::average(&[mk(1.0), mk(3.0)]).unwrap();
    assert_eq!(avg.loglik, vec![2.0, 4.0]);
    assert_eq!(avg.mean(), 3.0);
    let short = LoglikTrace { loglik: vec![1.0], ..LoglikTrace::default() };
    assert!(LoglikTrace::average(&[mk(1.0), short]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    avg.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("t,loglik,logdet_term,residual_term"));
    assert_eq!(text.lines().count(), 3);
}
