"""Rooted dated binary phylogenies with catastrophes and calibrations.

Node labels on a tree with L leaves: 0 is the pre-root ancestor at time
minus infinity (a sentinel, never used in arithmetic), 1..L-1 are internal
nodes with strictly increasing times (1 is the root), L..2L-1 are leaves.
Leaves sit at time 0 unless sampled earlier (offset) or explicitly relaxed.
Branches are labelled by their offspring node, so branch i runs from
times[parent[i]] down to times[i]; there is no branch above node 0 and
branch 1 (above the root) never carries catastrophes.

Instances are treated as immutable once constructed; proposal code builds
edited copies via ``from_arrays``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Catastrophe:
    """A burst event on branch ``branch`` at relative position ``u``.

    The event time is ``t_b + u * (t_pa(b) - t_b)``: u near 0 is near the
    offspring end, u near 1 the parent end.
    """

    branch: int
    u: float

    def __post_init__(self):
        if not 0.0 < self.u < 1.0:
            raise ValueError("relative position must be inside (0, 1)")

    def time(self, tree: "Phylogeny") -> float:
        tb = tree.times[self.branch]
        return tb + self.u * (tree.times[tree.parent[self.branch]] - tb)


@dataclass(frozen=True)
class CladeConstraint:
    """A calibration: root window, clade (ancestry + optional MRCA window),
    or leaf sampling-time window.

    kind "root":  lower <= t_root <= upper (lower is required for a proper
                  tree prior).
    kind "clade": ``leaves`` must form a clade when ``monophyly``; if a
                  window is given it applies to the clade's root node.
    kind "leaf":  window on the named leaf's sampling time (a relaxed leaf;
                  the leaf time becomes a sampled quantity).
    """

    kind: str
    lower: float | None = None
    upper: float | None = None
    leaves: tuple[str, ...] = ()
    monophyly: bool = True

    def __post_init__(self):
        if self.kind not in ("root", "clade", "leaf"):
            raise ValueError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "clade" and len(self.leaves) < 2:
            raise ValueError("clade constraint needs at least two leaves")
        if self.kind == "leaf" and len(self.leaves) != 1:
            raise ValueError("leaf constraint names exactly one leaf")
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise ValueError("constraint window has lower > upper")
        object.__setattr__(self, "leaves", tuple(self.leaves))


@dataclass(frozen=True)
class LineageSlice:
    """Ordered live branches of a tree at one time point.

    ``branches`` lists branch labels left to right; position i (1-based)
    of a trait pattern refers to ``branches[i-1]``.  ``extinct`` flags
    offset leaves already sampled by this time: they stay in the tuple but
    their traits are frozen.
    """

    time: float
    branches: tuple[int, ...]
    extinct: tuple[bool, ...]

    @property
    def n_total(self) -> int:
        return len(self.branches)

    @property
    def n_active(self) -> int:
        return len(self.branches) - sum(self.extinct)


class Phylogeny:
    """A dated binary tree plus catastrophes and calibration constraints."""

    def __init__(self, parent, children, times, leaf_names,
                 catastrophes=(), constraints=(), validate=True):
        self.parent = np.asarray(parent, dtype=np.int32)
        self.children = np.asarray(children, dtype=np.int32)
        self.times = np.asarray(times, dtype=np.float64)
        self.leaf_names = tuple(str(s) for s in leaf_names)
        self.catastrophes = tuple(sorted(
            (Catastrophe(int(c.branch), float(c.u)) for c in catastrophes),
            key=lambda c: (c.branch, c.u)))
        self.constraints = tuple(constraints)
        self._bounds = None
        self._node_windows = None
        if validate:
            self.validate()

    # -- basic structure ---------------------------------------------------

    @property
    def L(self) -> int:
        return len(self.leaf_names)

    @property
    def n_nodes(self) -> int:
        return 2 * self.L

    @property
    def root_time(self) -> float:
        return float(self.times[1])

    def is_leaf(self, i) -> bool:
        return i >= self.L

    def leaf_node(self, name: str) -> int:
        return self.L + self.leaf_names.index(name)

    def leaf_name(self, node: int) -> str:
        return self.leaf_names[node - self.L]

    def branch_length(self, i: int) -> float:
        if i <= 1:
            raise ValueError("branch above the root has no finite length")
        return float(self.times[i] - self.times[self.parent[i]])

    def total_length(self) -> float:
        """Sum of finite branch lengths (every branch except the root's)."""
        out = 0.0
        for i in range(2, self.n_nodes):
            out += self.times[i] - self.times[self.parent[i]]
        return float(out)

    def internal_nodes(self):
        return range(1, self.L)

    def leaves(self):
        return range(self.L, self.n_nodes)

    def cat_counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for c in self.catastrophes:
            out[c.branch] = out.get(c.branch, 0) + 1
        return out

    @property
    def end_time(self) -> float:
        return float(np.max(self.times[self.L:]))

    # -- construction ------------------------------------------------------

    @classmethod
    def from_arrays(cls, parent, children, times, leaf_names,
                    catastrophes=(), constraints=(), validate=True):
        """Build a tree, relabelling internal nodes into time order.

        Input arrays may label internal nodes 1..L-1 in any order (node 0
        must be the pre-root ancestor and nodes L..2L-1 the leaves); the
        returned tree has internal labels sorted by time.  Catastrophe
        branch labels are remapped along with the nodes.
        """
        parent = np.asarray(parent, dtype=np.int32).copy()
        children = np.asarray(children, dtype=np.int32).copy()
        times = np.asarray(times, dtype=np.float64).copy()
        L = len(leaf_names)
        order = np.argsort(times[1:L], kind="stable") + 1
        perm = np.arange(2 * L, dtype=np.int32)
        perm[order] = np.arange(1, L, dtype=np.int32)
        new_parent = np.empty_like(parent)
        new_children = np.empty_like(children)
        new_times = np.empty_like(times)
        for old in range(2 * L):
            new = perm[old]
            new_times[new] = times[old]
            p = parent[old]
            new_parent[new] = perm[p] if p >= 0 else -1
            for k in (0, 1):
                c = children[old, k]
                new_children[new, k] = perm[c] if c >= 0 else -1
        cats = [Catastrophe(int(perm[c.branch]), c.u) for c in catastrophes]
        return cls(new_parent, new_children, new_times, leaf_names,
                   cats, constraints, validate=validate)

    def validate(self):
        L = self.L
        n = self.n_nodes
        if L < 2:
            raise ValueError("need at least two leaves")
        if self.parent.shape != (n,) or self.children.shape != (n, 2):
            raise ValueError("parent/children arrays have wrong shape")
        if len(set(self.leaf_names)) != L:
            raise ValueError("leaf names must be unique")
        if self.parent[0] != -1 or self.children[0, 0] != 1 or self.children[0, 1] != -1:
            raise ValueError("node 0 must be the pre-root ancestor of the root")
        if self.parent[1] != 0:
            raise ValueError("root must hang off node 0")
        if not np.isneginf(self.times[0]):
            raise ValueError("pre-root ancestor time must be -inf")
        for i in range(1, L):
            c = self.children[i]
            if c[0] < 0 or c[1] < 0 or c[0] == c[1]:
                raise ValueError(f"internal node {i} must have two distinct children")
            for k in (0, 1):
                if self.parent[c[k]] != i:
                    raise ValueError(f"parent/children mismatch at node {i}")
        for i in range(L, n):
            if self.children[i, 0] != -1 or self.children[i, 1] != -1:
                raise ValueError(f"leaf {i} must not have children")
        seen = np.zeros(n, dtype=bool)
        stack = [1]
        seen[0] = True
        while stack:
            i = stack.pop()
            if seen[i]:
                raise ValueError("cycle in tree structure")
            seen[i] = True
            for k in (0, 1):
                c = self.children[i, k]
                if c >= 0:
                    stack.append(c)
        if not seen.all():
            raise ValueError("tree is not connected")
        internal = self.times[1:L]
        if np.any(np.diff(internal) <= 0):
            raise ValueError("internal node times must be strictly increasing with label")
        for i in range(2, n):
            if not self.times[i] > self.times[self.parent[i]]:
                raise ValueError(f"node {i} not strictly younger than its parent")
        for c in self.catastrophes:
            if not 2 <= c.branch < n:
                raise ValueError(f"catastrophe branch {c.branch} out of range "
                                 "(none allowed above the root)")
            if not 0.0 < c.u < 1.0:
                raise ValueError("catastrophe relative position must lie in (0, 1)")
        names = set(self.leaf_names)
        for con in self.constraints:
            for s in con.leaves:
                if s not in names:
                    raise ValueError(f"constraint references unknown leaf {s!r}")

    # -- slices ------------------------------------------------------------

    def slice_lineages(self, t: float) -> LineageSlice:
        """Ordered tuple of branches alive at time ``t``.

        A branch is alive when its parent node is at or before ``t`` and
        its offspring node is later; leaf branches stay in the tuple up to
        the end of the process, flagged extinct once their sampling time
        has passed.  At a branching time the offspring branches are the
        live ones.
        """
        if t < self.times[1]:
            raise ValueError("time %r is before the root at %r"
                             % (t, float(self.times[1])))
        branches: list[int] = []
        extinct: list[bool] = []

        def visit(i):
            if self.is_leaf(i):
                branches.append(i)
                extinct.append(bool(self.times[i] < t))
            elif t < self.times[i]:
                branches.append(i)
                extinct.append(False)
            else:
                visit(self.children[i, 0])
                visit(self.children[i, 1])

        visit(1)
        return LineageSlice(float(t), tuple(branches), tuple(extinct))

    def branching_index(self, node: int) -> int:
        """1-based position of branch ``node`` in the slice just before it
        branches."""
        if not 1 <= node < self.L:
            raise ValueError("node %d is not internal" % node)
        t = self.times[node]
        branches: list[int] = []

        def visit(i):
            if self.is_leaf(i) or self.times[i] >= t:
                branches.append(i)
            else:
                visit(self.children[i, 0])
                visit(self.children[i, 1])

        visit(1)
        return branches.index(node) + 1

    # -- clades ------------------------------------------------------------

    def clade(self, node: int) -> frozenset[str]:
        """Leaf names below (and including) ``node``."""
        out = []
        stack = [node]
        while stack:
            i = stack.pop()
            if self.is_leaf(i):
                out.append(self.leaf_name(i))
            else:
                stack.extend(self.children[i])
        return frozenset(out)

    def clade_map(self) -> dict[int, frozenset[str]]:
        return {i: self.clade(i) for i in self.internal_nodes()}

    def mrca(self, names) -> int:
        nodes = {self.leaf_node(s) for s in names}
        if not nodes:
            raise ValueError("mrca of an empty set")
        # walk each leaf's ancestor chain; deepest common member
        chains = []
        for s in nodes:
            chain = [s]
            while chain[-1] != 1:
                chain.append(int(self.parent[chain[-1]]))
            chains.append(set(chain))
        common = set.intersection(*chains)
        best = 1
        t_best = self.times[1]
        for i in common:
            if self.times[i] > t_best:
                best, t_best = i, self.times[i]
        return int(best)

    # -- constraints and prior --------------------------------------------

    def root_window(self) -> tuple[float, float]:
        """Root-time calibration window; the lower end must be present."""
        for con in self.constraints:
            if con.kind == "root":
                if con.lower is None:
                    raise ValueError("root window must have a lower bound")
                return float(con.lower), float(con.upper if con.upper is not None else np.inf)
        raise ValueError("no root-time window among the constraints")

    def node_constraint_windows(self) -> dict[int, tuple[float, float]]:
        """Explicit (lower, upper) window per constrained node, by label."""
        if self._node_windows is not None:
            return self._node_windows
        win: dict[int, tuple[float, float]] = {}

        def add(node, lo, hi):
            old = win.get(node, (-np.inf, np.inf))
            win[node] = (max(old[0], lo), min(old[1], hi))

        for con in self.constraints:
            lo = -np.inf if con.lower is None else float(con.lower)
            hi = np.inf if con.upper is None else float(con.upper)
            if con.kind == "root":
                add(1, lo, hi)
            elif con.kind == "leaf":
                add(self.leaf_node(con.leaves[0]), lo, hi)
            else:
                if con.lower is not None or con.upper is not None:
                    add(self.mrca(con.leaves), lo, hi)
        self._node_windows = win
        return win

    def constraints_ok(self) -> bool:
        """Do the current topology and times satisfy every constraint?"""
        for con in self.constraints:
            if con.kind == "clade" and con.monophyly:
                if self.clade(self.mrca(con.leaves)) != frozenset(con.leaves):
                    return False
        for node, (lo, hi) in self.node_constraint_windows().items():
            t = self.times[node]
            if not lo <= t <= hi:
                return False
        for i in self.leaves():
            if self.times[i] <= self.times[self.parent[i]]:
                return False
        return True

    def node_bounds(self):
        """Earliest/latest admissible time per node given topology and
        constraints: (earliest, latest) float arrays over all nodes.

        Leaves without a window are fixed at their stored time.  Requires
        a root window.
        """
        if self._bounds is not None:
            return self._bounds
        n = self.n_nodes
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        win = self.node_constraint_windows()
        root_lo, root_hi = self.root_window()
        for i in self.leaves():
            if i in win:
                lo[i], hi[i] = win[i]
            else:
                lo[i] = hi[i] = self.times[i]
        for i in range(1, self.L):
            if i in win:
                lo[i], hi[i] = win[i]
        lo[1] = max(lo[1], root_lo)
        hi[1] = min(hi[1], root_hi)
        # latest: below every descendant's latest
        latest = hi.copy()
        for i in range(self.L - 1, 0, -1):
            c0, c1 = self.children[i]
            latest[i] = min(latest[i], latest[c0], latest[c1])
        # earliest: after every ancestor's earliest
        earliest = lo.copy()
        order = sorted(range(1, n), key=lambda i: self.times[i])
        for i in order:
            if i != 1:
                earliest[i] = max(earliest[i], earliest[self.parent[i]])
        earliest[0] = -np.inf
        latest[0] = -np.inf
        self._bounds = (earliest, latest)
        return self._bounds

    def free_nodes(self) -> list[int]:
        """Internal non-root nodes whose earliest admissible time is the
        root's earliest admissible time (no constraint of their own bites
        from below)."""
        earliest, _ = self.node_bounds()
        return [i for i in range(2, self.L) if earliest[i] == earliest[1]]


# ---------------------------------------------------------------------------
# Counting admissible node-time orderings

_MAX_ENUMERATED_LEAVES = 12
_MAX_ORDERINGS = 2_000_000


def count_orderings(tree: Phylogeny) -> int:
    """Number of admissible time-orderings of the internal nodes.

    Without explicit internal-node time windows every linear extension of
    the ancestry partial order is achievable and the count has a closed
    form ((L-1)! over subtree sizes).  With windows, orderings are counted
    by explicit enumeration with a feasibility check; that route is only
    supported for L <= 12.
    """
    L = tree.L
    win = tree.node_constraint_windows()
    windowed = [i for i in win if i < L and i != 1]
    if not windowed:
        count = math.factorial(L - 1)
        sizes = np.ones(L, dtype=np.int64)
        for i in range(L - 1, 0, -1):
            for c in tree.children[i]:
                if c < L:
                    sizes[i] += sizes[c]
        for i in range(1, L):
            count //= int(sizes[i])
        return count
    if L > _MAX_ENUMERATED_LEAVES:
        raise ValueError(
            "internal-node time windows with more than "
            f"{_MAX_ENUMERATED_LEAVES} leaves: ordering count unsupported")

    earliest, latest = tree.node_bounds()
    root_lo, _ = tree.root_window()
    nodes = list(range(1, L))
    lo = {i: max(win.get(i, (-np.inf, np.inf))[0], root_lo) for i in nodes}
    hi = {i: float(latest[i]) for i in nodes}
    kids = {i: [int(c) for c in tree.children[i] if c < L] for i in nodes}
    indeg = {i: 0 for i in nodes}
    for i in nodes:
        for c in kids[i]:
            indeg[c] += 1

    count = 0
    seen = 0

    def rec(avail, frontier, reached):
        nonlocal count, seen
        if not avail:
            count += 1
            return
        seen += 1
        if seen > _MAX_ORDERINGS:
            raise ValueError("too many node-time orderings to enumerate")
        for i in sorted(avail):
            t = max(frontier, lo[i])
            if t >= hi[i]:
                continue
            nxt = dict(reached)
            new_avail = set(avail)
            new_avail.remove(i)
            for c in kids[i]:
                nxt[c] = nxt.get(c, 0) + 1
                if nxt[c] == indeg[c]:
                    new_avail.add(c)
            rec(new_avail, t, nxt)

    rec({1}, -np.inf, {})
    return count


def log_tree_prior(tree: Phylogeny) -> float:
    """Log density of the calibrated tree prior at this tree.

    Proportional to 1/Z(g) times, for each free internal non-root node, the
    ratio (earliest root bound - node's latest bound)/(root time - node's
    latest bound); Z(g) counts admissible node-time orderings.  Uniform over
    admissible states otherwise; -inf when a constraint is violated.
    """
    tree.root_window()  # raises when absent
    if not tree.constraints_ok():
        return -np.inf
    earliest, latest = tree.node_bounds()
    root_lo = earliest[1]
    t1 = tree.root_time
    if not earliest[1] <= t1 <= latest[1]:
        return -np.inf
    out = -math.log(count_orderings(tree))
    for i in tree.free_nodes():
        num = root_lo - latest[i]
        den = t1 - latest[i]
        if not (num < 0 and den < 0):
            return -np.inf
        out += math.log(num / den)
    return out
