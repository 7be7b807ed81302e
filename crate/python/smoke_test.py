"""Smoke test for the `adfilter` extension.

Uses an installed module when there is one (`maturin develop -m crates/py/Cargo.toml`);
otherwise builds the release library with cargo and loads it from target/.
"""

import importlib
import os
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def load():
    try:
        return importlib.import_module("adfilter")
    except ImportError:
        pass
    subprocess.run(
        ["cargo", "build", "--release", "-p", "adfilter-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = next(p for p in (ROOT / "target" / "release").glob("libadfilter.*") if p.suffix in (".so", ".dylib"))
    tmp = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(lib, tmp / "adfilter.so")
    sys.path.insert(0, str(tmp))
    return importlib.import_module("adfilter")


def main():
    af = load()

    for m in af.METHODS:
        row = af.gradcheck(m, system="cw")
        print(f"gradcheck {m:<11} max rel {row['max_rel_error']:.2e}")
        assert row["passed"]

    cfg = af.Config(system="cw", method="adenkf", T=60, n_train=2, n_val=1, n_test=1, epochs=3, seed=int(os.environ.get("SEED", 1)))
    print(cfg)
    exp = af.Experiment(cfg)
    before = exp.param_errors(trained=False)["theta"]
    curves = exp.train()
    after = exp.param_errors()["theta"]
    print(f"theta error {before:.3e} -> {after:.3e} over {len(curves)} epochs")
    report = exp.evaluate()
    kf = exp.kalman_reference()[0]
    print(f"filter rmse {report['filter_rmse']:.4f}, mean loglik {report['mean_loglik']:.3f}, KF total loglik {kf['loglik']:.3f}")

    try:
        af.Config(system="glv", method="ad3dvar-k")
    except ValueError as e:
        print("rejected:", e)
    else:
        raise AssertionError("glv with ad3dvar-k should be rejected")
    print("ok")


if __name__ == "__main__":
    main()
