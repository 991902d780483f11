"""Regenerate tests/golden/*.json.

Each golden is written only after the package result agrees with the
independent Lagrange-multiplier homogenization in tests/oracles.py.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

from oracles import kkt_homogenize  # noqa: E402
from shellular.fem import BaseMaterial, homogenize  # noqa: E402
from shellular.field import random_design  # noqa: E402
from shellular.props import property_report  # noqa: E402
from shellular.voxel import ShellParams  # noqa: E402

GOLDENS = {
    # name: (symmetry, n_charges, K, seed, r)
    "homog_cubic2_seed7_r32": ("cubic_octant", 2, 2, 7, 32),
}
ORACLE_RTOL = 1e-8


def build(name, sym, n, K, seed, r):
    params = random_design(sym, n, K, seed=seed)
    mat = BaseMaterial()
    res = homogenize(params, ShellParams(), mat, r)
    c = res.tensor.c
    c_ref, _, _ = kkt_homogenize(res.mesh.elements, res.mesh.beta, r, mat.youngs, mat.poisson, dense=False)
    err = np.abs(c - c_ref).max() / np.abs(c_ref).max()
    if err > ORACLE_RTOL:
        raise SystemExit(f"{name}: oracle mismatch {err:.3e} > {ORACLE_RTOL}")
    report = property_report(c, res.volume_ratio, mat)
    return {
        "cli": ["homog", "--random", f"{sym}:{n}:{K}", "--seed", str(seed), "-r", str(r)],
        "design": params.to_dict(),
        "C": c_ref.tolist(),
        "volume_ratio": res.volume_ratio,
        "n_elements": res.mesh.n_elements,
        "report": report.to_dict(),
        "oracle_rel_error": float(err),
    }


def main():
    out = ROOT / "tests" / "golden"
    out.mkdir(exist_ok=True)
    for name, args in GOLDENS.items():
        doc = build(name, *args)
        (out / f"{name}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        print(f"{name}: oracle agreement {doc['oracle_rel_error']:.2e}")


if __name__ == "__main__":
    main()
