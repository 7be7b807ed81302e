use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &str) {
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(adfilter::adfilter)(py);
        py.import("sys").unwrap().getattr("modules").unwrap().set_item("adfilter", m).unwrap();
        let globals = PyDict::new(py);
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python code failed: {e}");
        }
    });
}

#[test]
fn config_round_trip_and_validation() {
    with_module(
        r#"
import adfilter, json
c = adfilter.Config(system="l96", method="adens3dvar", T=50)
d = c.to_dict()
assert d["steps"] == 50 and d["dim"] == 40 and c.method == "adens3dvar"
assert adfilter.Config.from_json(c.to_json()).to_dict() == d
try:
    adfilter.Config(system="glv", method="ad3dvar-k")
    raise AssertionError("expected rejection")
except ValueError as e:
    assert "obs_mode" in str(e)
assert adfilter.METHODS == ["ad3dvar-c", "ad3dvar-k", "adenkf", "adens3dvar"]
"#,
    );
}

#[test]
fn experiment_trains_and_evaluates() {
    with_module(
        r#"
import adfilter
c = adfilter.Config(system="cw", method="adenkf", T=40, n_train=1, n_val=1, n_test=1, epochs=2)
e = adfilter.Experiment(c)
before = e.param_errors(trained=False)["theta"]
curves = e.train()
assert len(curves) == 2 and curves[0]["epoch"] == 1
r = e.evaluate()
assert r["steps"] == 40 and r["method"] == "adenkf"
assert len(e.truth("test", 0)) == 41
kf = e.kalman_reference()[0]
assert len(kf["analyses"]) == 40
assert sum(kf["loglik_trace"]) - kf["loglik"] < 1e-9
assert "cw_rate" in e.parameters()
assert len(e.loglik_traces()[0]) == 40
"#,
    );
}

#[test]
fn numerical_helpers() {
    with_module(
        r#"
import adfilter
for m in adfilter.METHODS:
    assert adfilter.gradcheck(m)["passed"]
assert not adfilter.gradcheck("adenkf", corrupt=True)["passed"]
t = adfilter.gaspari_cohn(10, 2.0)
assert t[0][0] == 1.0 and t[0][5] == 0.0 and t[1][3] == t[3][1]
a = adfilter.build_block_a([0.1 * k for k in range(1, 11)], 8)
assert len(a) == 8
xs = [1.0] * 8
r = [-sum(row) for row in a]
assert max(abs(v) for v in adfilter.glv_rhs(xs, a, r)) == 0.0
out = adfilter.kalman_filter([0.0], [[1.0]], [[1.0]], [([0], [1.0], [1.0])])
assert abs(out["analyses"][0][0] - 0.5) < 1e-15
"#,
    );
}
