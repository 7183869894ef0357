#!/usr/bin/env python3
"""Smoke test for the colflat Python extension.

Builds nothing itself: run `cargo build -p colflat-py --release` first
(or pass --debug to use the debug artifact). The script copies the cdylib
next to itself under the importable name and exercises the main entry
points.
"""

import argparse
import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent


def import_module(profile: str):
    libname = "libcolflat.so" if sys.platform != "darwin" else "libcolflat.dylib"
    built = REPO_ROOT / "target" / profile / libname
    if not built.exists():
        sys.exit(
            f"missing {built}; run `cargo build -p colflat-py --{profile}` first"
            if profile == "release"
            else f"missing {built}; run `cargo build -p colflat-py` first"
        )
    tmp = Path(tempfile.mkdtemp(prefix="colflat_py_"))
    ext = ".so" if sys.platform != "darwin" else ".so"
    shutil.copy2(built, tmp / f"colflat{ext}")
    sys.path.insert(0, str(tmp))
    import colflat  # noqa: E402

    return colflat


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--debug", action="store_true", help="use target/debug")
    args = parser.parse_args()
    colflat = import_module("debug" if args.debug else "release")

    # Signal generation: every column of a flat signal has unit l1 norm.
    x = colflat.gen_signal(4, 2, 4, 7)
    n = len(x)
    assert n == 4 and all(len(row) == 4 for row in x)
    col_l1 = [sum(abs(x[i][j]) for i in range(n)) for j in range(n)]
    assert all(abs(c - 1.0) < 1e-9 for c in col_l1), col_l1
    assert abs(colflat.norm_colmax_l1(x) - 1.0) < 1e-9
    assert colflat.flatness_defect(x) < 1e-12

    # Norm pair on a hand matrix.
    m = [[1.0, -2.0], [3.0, 0.0]]
    assert abs(colflat.norm_colmax_l1(m) - 4.0) < 1e-12
    assert abs(colflat.dual_norm(m) - 5.0) < 1e-12

    # Prox identities: identity at tau = 0, zero once tau reaches the
    # dual norm.
    p0 = colflat.prox_colmax_l1(m, 0.0)
    assert p0 == m
    pz = colflat.prox_colmax_l1(m, colflat.dual_norm(m) + 1e-9)
    assert all(abs(v) < 1e-9 for row in pz for v in row)

    # Projection is idempotent and feasible.
    q = colflat.project_dual_ball(m, 1.0)
    assert colflat.dual_norm(q) <= 1.0 + 1e-9
    q2 = colflat.project_dual_ball(q, 1.0)
    assert max(abs(a - b) for ra, rb in zip(q, q2) for a, b in zip(ra, rb)) < 1e-10

    # Moreau split of the cone projection.
    g = [[0.3, -1.2, 0.4], [0.9, 0.1, -0.5], [-0.2, 0.8, 1.1]]
    x3 = colflat.gen_signal(3, 1, 3, 5)
    dist_sq, sup = colflat.cone_distance(g, x3)
    total = sum(v * v for row in g for v in row)
    assert abs(dist_sq + sup * sup - total) < 1e-8

    # Noise-free recovery with plenty of measurements.
    res = colflat.solve_planted("dense", 4, 1, 16, 0.0, 42)
    assert res["converged"], res
    assert res["error_fro"] < 1e-5, res["error_fro"]

    # Trivial kernel => the null space property holds with rho = 0.
    rho, ok = colflat.nsp_ratio("dense", 3, 1, 9, 3)
    assert ok and rho == 0.0

    # Scalar width statistic has mean 1/2.
    mean, se = colflat.width_sq(1, 1, 1, 4000, 9)
    assert abs(mean - 0.5) <= 4.0 * se, (mean, se)

    # Closed forms.
    b = colflat.width_bound_gaussian(10, 2, 10)
    assert abs(b - (1.0 + 20.0 * math.log(1e6))) < 1e-9
    req = colflat.required_measurements_gaussian(10, 2, 0.0, 1.0, 1.0)
    w = math.sqrt(20.0 * math.log(1e6))
    assert abs(req - (1.0 + w) ** 2) < 1e-9
    nec = colflat.necessary_measurements(16, 2)
    assert abs(nec - 32.0 * math.log(2.0) / (2.0 * math.log(3.0))) < 1e-9

    print("colflat python smoke test: all checks passed")


if __name__ == "__main__":
    main()
