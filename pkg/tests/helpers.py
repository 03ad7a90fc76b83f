"""Shared builders for the test suite: random trees, the 10-leaf
benchmark phylogeny, and its calibration constraint sets."""

import numpy as np

from sdlt.epf import RateParams
from sdlt.phylo import CladeConstraint, Phylogeny
from sdlt import treeio

# 10-leaf benchmark tree: root at -1000, one ancient offset leaf, one
# recent offset leaf, two catastrophes, clade {s6..s10} at -430.
BENCH_TREE_TEXT = (
    "((s1[&t=-500.0],((s2[&t=0.0],s3[&t=0.0])[&t=-320.0,cats={0.35}],"
    "(s4[&t=0.0],s5[&t=0.0])[&t=-180.0])[&t=-560.0])[&t=-780.0],"
    "(s6[&t=0.0],((s7[&t=0.0,cats={0.6}],s8[&t=-100.0])[&t=-210.0],"
    "(s9[&t=0.0],s10[&t=0.0])[&t=-90.0])[&t=-300.0])[&t=-430.0])"
    "[&t=-1000.0];")

BENCH_RATES = RateParams(birth=0.1, death=5e-4, transfer=5e-4)
BENCH_KAPPA = 0.2212
BENCH_ROOT_TIME = -1000.0
BENCH_CLADE = ("s6", "s7", "s8", "s9", "s10")


def bench_constraints(variant="original"):
    """Calibration windows for the benchmark tree.

    "clade_relaxed" widens the clade time window, "s1_relaxed" widens
    the old offset leaf's window; everything else stays put.
    """
    s1_win = (-800.0, -200.0) if variant == "s1_relaxed" else (-550.0, -450.0)
    clade_win = ((-700.0, -100.0) if variant == "clade_relaxed"
                 else (-500.0, -200.0))
    return (
        CladeConstraint("root", lower=-2000.0, upper=-600.0),
        CladeConstraint("leaf", lower=s1_win[0], upper=s1_win[1],
                        leaves=("s1",)),
        CladeConstraint("leaf", lower=-150.0, upper=-50.0, leaves=("s8",)),
        CladeConstraint("clade", lower=clade_win[0], upper=clade_win[1],
                        leaves=BENCH_CLADE),
    )


def bench_tree(variant="original"):
    return treeio.parse_tree(BENCH_TREE_TEXT,
                             constraints=bench_constraints(variant))


def bench_obs_probs():
    """Per-leaf observation probabilities, one fixed draw from Beta(1, 1/3)."""
    return np.random.default_rng(7).beta(1.0, 1.0 / 3.0, size=10)


def coalescent_tree(rng, names, scale=400.0, offset_prob=0.0, cat_prob=0.0,
                    constraints=()):
    """Random dated tree by uniform pairwise merging.

    Merge times run strictly backwards from the merged children, so the
    result is always a valid phylogeny; catastrophes land on uniformly
    chosen non-root branches.
    """
    L = len(names)
    leaf_times = [(-rng.uniform(50.0, 400.0)
                   if rng.uniform() < offset_prob else 0.0)
                  for _ in names]
    parent = np.full(2 * L, -1, dtype=np.int32)
    children = np.full((2 * L, 2), -1, dtype=np.int32)
    times = np.zeros(2 * L)
    times[0] = -np.inf
    active = []
    for k in range(L):
        times[L + k] = leaf_times[k]
        active.append((L + k, leaf_times[k]))
    next_id = L - 1
    while len(active) > 1:
        i, j = sorted(rng.choice(len(active), size=2, replace=False))
        nb, tb = active.pop(j)
        na, ta = active.pop(i)
        tm = min(ta, tb) - rng.exponential(scale) - 1.0
        parent[na] = next_id
        parent[nb] = next_id
        children[next_id, 0] = na
        children[next_id, 1] = nb
        times[next_id] = tm
        active.append((next_id, tm))
        next_id -= 1
    root = active[0][0]
    parent[root] = 0
    children[0, 0] = root
    cats = []
    if cat_prob > 0.0:
        for b in range(2, 2 * L):
            while rng.uniform() < cat_prob:
                cats.append((b, float(rng.uniform(0.05, 0.95))))
    from sdlt.phylo import Catastrophe
    cat_objs = tuple(Catastrophe(b, u) for b, u in cats)
    return Phylogeny.from_arrays(parent, children, times, names,
                                 cat_objs, constraints)


def random_matrix_text(rng, taxa, n_traits, p_present=0.45, p_missing=0.1):
    rows = ["\t".join(["taxon"] + ["c%d" % j for j in range(n_traits)])]
    for name in taxa:
        cells = []
        for _ in range(n_traits):
            r = rng.uniform()
            if r < p_missing:
                cells.append("?")
            elif r < p_missing + p_present:
                cells.append("1")
            else:
                cells.append("0")
        rows.append("\t".join([name] + cells))
    return "\n".join(rows) + "\n"
