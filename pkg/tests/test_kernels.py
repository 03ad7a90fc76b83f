"""The jit and pure-numpy backends must be interchangeable.

Both are driven through subprocesses so the comparison never depends on
which backend this test process itself imported.
"""

import os
import subprocess
import sys

import numpy as np

from sdlt import kernels

PROBE = r"""
import os, sys
import numpy as np
from sdlt import kernels
from sdlt.epf import RateParams, SolverOptions, expected_frequencies
from sdlt.treeio import parse_tree

sys.path.insert(0, os.environ["SDLT_TEST_DIR"])
from helpers import BENCH_TREE_TEXT

rng = np.random.default_rng(0)
w = 4
active = np.array([True, True, False, True])
tables = kernels.make_tables(w, active)
x = rng.exponential(size=1 << w)
x[0] = 0.0
dx = kernels.generator_matvec(x, tables, 0.31, 0.17, 0.9)

y = x.copy()
st = kernels.solve_interval_raw(y, 0.0, 250.0, tables, 0.0031, 0.0017, 0.09,
                                1e-8, 1e-10, 20000)
assert st.ok

bases = rng.integers(0, 1 << w, size=40)
masks = np.array([int(m) & ~int(b) for b, m in
                  zip(bases, rng.integers(0, 1 << w, size=40))])
sums = kernels.subset_sums(x, bases, masks)

tree = parse_tree(BENCH_TREE_TEXT)
res = expected_frequencies(tree, RateParams(0.1, 5e-4, 5e-4), kappa=0.2212,
                           xi=rng.uniform(0.5, 1.0, size=tree.L))
np.savez(os.environ["SDLT_PROBE_OUT"], backend=kernels.BACKEND, dx=dx, y=y,
         sums=sums, unit_means=res.unit_means,
         registered=res.registered_total, n_matvec=res.n_matvec)
"""


def run_probe(tmp_path, flag):
    out = tmp_path / ("probe_%s.npz" % flag)
    env = dict(os.environ, SDLT_NUMBA=flag,
               SDLT_TEST_DIR=os.path.dirname(os.path.abspath(__file__)),
               SDLT_PROBE_OUT=str(out))
    subprocess.run([sys.executable, "-c", PROBE], env=env, check=True,
                   timeout=300)
    return np.load(out)


def test_backends_agree(tmp_path):
    a = run_probe(tmp_path, "1")
    b = run_probe(tmp_path, "0")
    assert str(a["backend"]) == "numba" and str(b["backend"]) == "numpy"
    assert np.allclose(a["dx"], b["dx"], rtol=1e-13, atol=1e-13)
    assert np.allclose(a["sums"], b["sums"], rtol=1e-13, atol=1e-13)
    # step-size decisions may divide at the last bit, so the integrated
    # states are compared a little above the solver tolerance
    assert np.allclose(a["y"], b["y"], rtol=1e-9, atol=1e-12)
    assert np.allclose(a["unit_means"], b["unit_means"],
                       rtol=1e-9, atol=1e-15)
    assert abs(float(a["registered"]) - float(b["registered"])) < 1e-9


def test_flag_forces_numpy_backend(tmp_path):
    env = dict(os.environ, SDLT_NUMBA="off")
    got = subprocess.check_output(
        [sys.executable, "-c",
         "from sdlt import kernels; print(kernels.BACKEND)"],
        env=env, text=True, timeout=120)
    assert got.strip() == "numpy"


def test_make_tables_validation():
    import pytest
    with pytest.raises(ValueError):
        kernels.make_tables(0)
    with pytest.raises(ValueError):
        kernels.make_tables(3, active=[True, False])
    tables = kernels.make_tables(3, active=[False, True, False])
    assert list(tables.active_bits) == [1]
    assert tables.w_act[0b010] == 1 and tables.w_act[0b101] == 0


def test_status_text_unknown_code():
    assert "unknown" in kernels.status_text(99)
