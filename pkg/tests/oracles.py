"""Slow reference implementations used to pin expected values in tests.

Everything here is deliberately naive: dense matrices, explicit loops,
brute-force enumeration.  The package must agree with these independent
routes, never the other way around.  Nothing in here imports the solver
or pattern machinery under test; only tree bookkeeping fields are read.
"""

import itertools
import math

import numpy as np
from scipy.linalg import expm


def _children(tree, v):
    return int(tree.children[v, 0]), int(tree.children[v, 1])


def _cat_events(tree, severities):
    """(time, branch, kappa) per catastrophe; severities scalar or sequence."""
    cats = list(tree.catastrophes)
    if np.isscalar(severities) or severities is None:
        sev = [severities] * len(cats)
    else:
        sev = list(severities)
        if len(sev) != len(cats):
            raise ValueError("severity count mismatch")
    out = []
    for cat, k in zip(cats, sev):
        tb = float(tree.times[cat.branch])
        tp = float(tree.times[tree.parent[cat.branch]])
        out.append((tb + cat.u * (tp - tb), int(cat.branch), float(k)))
    return out


def dense_binary_means(tree, birth, death, transfer, severities=None):
    """Expected binary pattern frequencies by dense matrix exponentials.

    Returns (leaf_names, means) where means maps a presence tuple over
    leaf_names (canonical left-to-right order) to its expected count.
    The whole pipeline runs on full 2^n vectors with scipy's expm; cost
    is O(8^n) per interval, fine for the small trees tests use.
    """

    lam, mu, beta = float(birth), float(death), float(transfer)
    events = []
    for j in range(2, tree.L):
        events.append((float(tree.times[j]), 1, ("branch", j)))
    end = float(tree.end_time)
    for leaf in tree.leaves():
        tl = float(tree.times[leaf])
        if tl < end:
            events.append((tl, 2, ("freeze", leaf)))
    for t_c, b, k in _cat_events(tree, severities):
        events.append((t_c, 0, ("cat", b, k)))
    events.sort()

    c1, c2 = _children(tree, 1)
    tup = [c1, c2]
    active = [True, True]
    x = np.zeros(4)
    x[3] = lam / mu
    t_now = float(tree.times[1])

    def evolve(x, dt):
        n = len(tup)
        dim = 1 << n
        A = np.zeros((dim + 1, dim + 1))
        l_hat = sum(active)
        for m in range(1, dim):
            act_present = [j for j in range(n) if active[j] and (m >> j) & 1]
            act_absent = [j for j in range(n) if active[j] and not (m >> j) & 1]
            s_hat = len(act_present)
            for j in act_present:
                tgt = m ^ (1 << j)
                if tgt:
                    A[tgt, m] += mu
                A[m, m] -= mu
            for j in act_absent:
                rate = beta * s_hat / l_hat
                A[m ^ (1 << j), m] += rate
                A[m, m] -= rate
        for j in range(n):
            if active[j]:
                A[1 << j, dim] += lam
        aug = np.zeros(dim + 1)
        aug[:dim] = x
        aug[dim] = 1.0
        out = expm(A * dt) @ aug
        return out[:dim]

    def expand(x, pos):
        n = len(tup)
        out = np.zeros(1 << (n + 1))
        low_mask = (1 << pos) - 1
        for m in range(1, 1 << n):
            bit = (m >> pos) & 1
            m_new = (m & low_mask) | (bit << pos) | (bit << (pos + 1)) \
                | ((m >> (pos + 1)) << (pos + 2))
            out[m_new] = x[m]
        return out

    def catastrophe(x, pos, kappa):
        if kappa == 0.0:
            return x
        delta = -math.log1p(-kappa) / mu
        n = len(tup)
        dim = 1 << n
        A = np.zeros((dim + 1, dim + 1))
        l_hat = sum(active)
        for m in range(1, dim):
            if (m >> pos) & 1:
                tgt = m ^ (1 << pos)
                if tgt:
                    A[tgt, m] += mu
                A[m, m] -= mu
            else:
                s_oth = sum(1 for j in range(n)
                            if j != pos and active[j] and (m >> j) & 1)
                rate = beta * s_oth / l_hat
                if rate:
                    A[m ^ (1 << pos), m] += rate
                    A[m, m] -= rate
        A[1 << pos, dim] += lam
        aug = np.zeros(dim + 1)
        aug[:dim] = x
        aug[dim] = 1.0
        out = expm(A * delta) @ aug
        return out[:dim]

    for t_ev, _, ev in events:
        if t_ev > t_now:
            x = evolve(x, t_ev - t_now)
            t_now = t_ev
        if ev[0] == "branch":
            pos = tup.index(ev[1])
            a, b = _children(tree, ev[1])
            x = expand(x, pos)
            tup[pos:pos + 1] = [a, b]
            active[pos:pos + 1] = [True, True]
        elif ev[0] == "freeze":
            active[tup.index(ev[1])] = False
        else:
            x = catastrophe(x, tup.index(ev[1]), ev[2])
    if end > t_now:
        x = evolve(x, end - t_now)

    names = [tree.leaf_name(i) for i in tup]
    means = {}
    for m in range(1, 1 << len(tup)):
        bits = tuple((m >> j) & 1 for j in range(len(tup)))
        means[bits] = float(x[m])
    return names, means


def sd_binary_means(tree, birth, death, severities=None):
    """Closed-form expected binary pattern frequencies with no transfer.

    Without transfer every trait evolves independently down the tree, so
    each pattern mean is a sum over birth locations of (birth mass) x
    (probability the trait survives to exactly that leaf set), assembled
    by recursion over subtrees and exact integrals of the birth density
    along each edge.  No ODE solving anywhere.
    """

    lam, mu = float(birth), float(death)
    cats_by_branch = {}
    for t_c, b, k in _cat_events(tree, severities):
        cats_by_branch.setdefault(b, []).append((t_c, k))
    for lst in cats_by_branch.values():
        lst.sort()

    leaf_ids = list(tree.leaves())

    def subtree_leaves(v):
        if tree.is_leaf(v):
            return frozenset([v])
        a, b = _children(tree, v)
        return subtree_leaves(a) | subtree_leaves(b)

    def edge_surv(c):
        u = int(tree.parent[c])
        s = math.exp(-mu * (float(tree.times[c]) - float(tree.times[u])))
        for _, k in cats_by_branch.get(c, ()):
            s *= 1.0 - k
        return s

    def g(v):
        """Map leaf-set -> P(trait present at v ends observed exactly there)."""
        if tree.is_leaf(v):
            return {frozenset([v]): 1.0, frozenset(): 0.0}
        out = {}
        parts = []
        for c in _children(tree, v):
            gc = g(c)
            s = edge_surv(c)
            h = {S: s * p for S, p in gc.items()}
            h[frozenset()] = h.get(frozenset(), 0.0) + (1.0 - s)
            parts.append(h)
        for s1, p1 in parts[0].items():
            for s2, p2 in parts[1].items():
                key = s1 | s2
                out[key] = out.get(key, 0.0) + p1 * p2
        return out

    total = {}

    def add(dist, mass):
        for S, p in dist.items():
            if S:
                total[S] = total.get(S, 0.0) + mass * p

    add(g(1), lam / mu)
    for c in range(2, 2 * tree.L):
        u = int(tree.parent[c])
        t_u, t_c = float(tree.times[u]), float(tree.times[c])
        gc = g(c)
        cats = cats_by_branch.get(c, [])
        cuts = [t_u] + [t for t, _ in cats] + [t_c]
        for seg in range(len(cuts) - 1):
            z0, z1 = cuts[seg], cuts[seg + 1]
            mass = (lam / mu) * (math.exp(-mu * (t_c - z1))
                                 - math.exp(-mu * (t_c - z0)))
            for _, k in cats[seg:]:
                mass *= 1.0 - k
            add(gc, mass)
        for i, (t_cat, k) in enumerate(cats):
            mass = (lam * k / mu) * math.exp(-mu * (t_c - t_cat))
            for _, k2 in cats[i + 1:]:
                mass *= 1.0 - k2
            add(gc, mass)

    names, order = [], []
    stack = [1]
    while stack:
        v = stack.pop()
        if tree.is_leaf(v):
            names.append(tree.leaf_name(v))
            order.append(v)
        else:
            a, b = _children(tree, v)
            stack.extend([b, a])
    means = {}
    for bits in itertools.product((0, 1), repeat=len(order)):
        if not any(bits):
            continue
        S = frozenset(v for v, bit in zip(order, bits) if bit)
        means[bits] = total.get(S, 0.0)
    return names, means


def mix_observation(binary_means, xi):
    """Expected counts over {0,1,?} patterns given per-leaf report probs.

    binary_means maps presence tuples to means; xi is the matching list
    of observation probabilities.  Brute force over all completions.
    """

    width = len(xi)
    out = {}
    for q in itertools.product((0, 1, None), repeat=width):
        mean = 0.0
        for bits, x in binary_means.items():
            p = x
            for qi, bi, xi_i in zip(q, bits, xi):
                if qi is None:
                    p *= 1.0 - xi_i
                elif qi == bi:
                    p *= xi_i
                else:
                    p = 0.0
                    break
            mean += p
        key = "".join("?" if qi is None else str(qi) for qi in q)
        if key.strip("0") == "":
            continue
        out[key] = mean
    return out


def tally_pattern_counts(text):
    """Naive per-column pattern tally straight off the matrix file text."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    rows = [ln.split("\t") for ln in lines[1:]]
    counts = {}
    n_traits = len(rows[0]) - 1
    for j in range(1, n_traits + 1):
        col = "".join(r[j] for r in rows)
        counts[col] = counts.get(col, 0) + 1
    return counts


def enumerate_internal_orderings(tree):
    """Count ancestor-respecting permutations of internal nodes 2..L-1."""
    internals = [j for j in range(2, tree.L)]
    count = 0
    for perm in itertools.permutations(internals):
        rank = {j: i for i, j in enumerate(perm)}
        ok = True
        for j in internals:
            p = int(tree.parent[j])
            if p != 1 and rank[p] > rank[j]:
                ok = False
                break
        if ok:
            count += 1
    return count
