"""Smoke test for the Python bindings. Run after building the extension:

    pip install --no-build-isolation -e crates/py
    python python/smoke_test.py
"""

import json
import math
from pathlib import Path

import feeder_envelope as fe

ROOT = Path(__file__).resolve().parent.parent


def two_node_oracle():
    text = json.dumps({
        "base": {"v0_pu2": 1.0},
        "nodes": [{"id": 1, "vmin_pu2": 0.81, "vmax_pu2": 1.21}],
        "branches": [{"from": 0, "to": 1, "r_pu": 0.01, "x_pu": 0.02}],
    })
    f = fe.Feeder.from_json(text)
    lf = f.loadflow([-0.5], [-0.2])
    assert lf["converged"]
    assert abs(lf["V"][0] - 0.98185231994969729388) < 1e-10, lf["V"]
    assert abs(lf["l"][0] - 0.29536010060541223994) < 1e-10, lf["l"]


def bundled_feeder():
    f = fe.Feeder.bundled()
    assert f.n == 12
    zeros = [0.0] * f.n
    lf = f.loadflow(zeros, zeros)
    assert all(v == f.v0 for v in lf["V"])

    m = f.sensitivities()
    c = m["C"]
    assert len(c) == 12 and all(len(row) == 12 for row in c)
    assert all(c[i][i] == 1.0 for i in range(12))
    assert sorted(m["order"]) == list(range(1, 13))

    p = [-0.02] * f.n
    q = [-0.01] * f.n
    eigs = f.hessian_eigs(p, q, 9)
    assert eigs[0] == 0.0 and 0.0 < eigs[1] <= eigs[2], eigs
    jac = f.jacobian(p, q)
    assert all(math.isfinite(x) for x in jac["jp"] + jac["jq"] + jac["jv"])


def solves():
    f = fe.Feeder.bundled()
    cost = (ROOT / "data/scenarios/cost13.json").read_text()
    out = fe.solve(f, cost)
    assert out["admissible"] and out["converged"], out["violations"]
    assert out["violations"] == []

    hosting = (ROOT / "data/scenarios/hosting13.json").read_text()
    tight = fe.hosting(f, hosting)
    once = fe.hosting(f, hosting, tighten=False)
    assert tight["admissible"]
    assert tight["total"] >= once["total"] - 1e-9
    assert abs(sum(tight["capacity"]) - tight["total"]) < 1e-12
    return tight["total"]


def main():
    two_node_oracle()
    bundled_feeder()
    total = solves()
    print(f"smoke test passed; hosting capacity {total:.6f} pu")


if __name__ == "__main__":
    main()
