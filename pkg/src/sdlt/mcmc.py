"""Metropolis-Hastings sampling over trees, catastrophes, and rates.

The state is a dated tree (with its catastrophe placements) plus the
scalar model parameters.  Every move kernel proposes a small edit and
reports the log Hastings correction for it; because the catastrophe
prior is a density over absolute placement times while catastrophes ride
along with their branch when node times change, any kernel that
stretches a cat-carrying branch also reports the length-ratio Jacobian.

Posterior evaluation caches the pattern-space integration: the event
sequence of a proposal is diffed against the current state's and the ODE
solve resumes from the last checkpoint before the first change.  Cached
and uncached runs produce bit-identical chains; a debug switch computes
both and compares.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .epf import (IntegrationError, RateParams, SolverOptions, build_events,
                  expected_frequencies)
from .likelihood import (SEVERITY_HI, SEVERITY_LO, ModelParams,
                         PosteriorParts, log_posterior,
                         log_prior_catastrophes, log_prior_obs_probs,
                         log_prior_rate, log_prior_severity)
from .patterns import DEFAULT_RULE, MISSING
from .phylo import Catastrophe, Phylogeny, log_tree_prior

DEFAULT_MOVE_PROBS = {
    "death": 0.12,
    "transfer": 0.12,
    "severity": 0.08,
    "obs": 0.10,
    "add_cat": 0.08,
    "delete_cat": 0.08,
    "move_cat": 0.06,
    "node_time": 0.24,
    "spr": 0.12,
}

# Gamma(1e-3, 1e-3) has its median far below any usable rate, so the
# documented clipping of the prior median to [1e-6, 1] always lands on
# the floor.
INIT_RATE = 1e-6


@dataclass(frozen=True)
class KernelConfig:
    """Chain length, move mixture, and proposal widths."""

    iterations: int = 20000
    burn_in: int = 2000
    thin: int = 10
    seed: int = 0
    mode: str = "sdlt"              # "sdlt" or "sd" (transfer pinned at 0)
    prior_only: bool = False        # likelihood forced constant
    move_probs: Optional[dict] = None
    scale_factor: float = 1.5       # multiplicative window half-ratio, > 1
    severity_window: float = 0.1
    obs_window: float = 0.1
    solver: Optional[SolverOptions] = None
    debug_no_cache: bool = False

    def __post_init__(self):
        if self.mode not in ("sdlt", "sd"):
            raise ValueError("mode must be 'sdlt' or 'sd'")
        if not self.scale_factor > 1.0:
            raise ValueError("scale_factor must exceed 1")
        if self.thin < 1 or self.iterations < 0 or self.burn_in < 0:
            raise ValueError("bad chain length settings")

    def solver_options(self):
        opts = self.solver
        if opts is None:
            # chains tolerate a looser solve than one-shot evaluation
            opts = SolverOptions(rtol=1e-6, atol=1e-8)
        if not opts.keep_checkpoints:
            opts = replace(opts, keep_checkpoints=True)
        return opts


@dataclass
class ChainState:
    tree: Phylogeny
    model: ModelParams
    parts: PosteriorParts

    @property
    def log_posterior(self):
        return self.parts.log_posterior


@dataclass
class Proposal:
    tree: Phylogeny
    model: ModelParams
    log_hastings: float
    change: str                      # "rates" | "severity" | "xi" | "tree"


# ---------------------------------------------------------------------------
# posterior evaluation with event-diff caching


def _labels_stable(a: Phylogeny, b: Phylogeny) -> bool:
    return (a.leaf_names == b.leaf_names
            and np.array_equal(a.parent, b.parent)
            and np.array_equal(a.children, b.children))


def _first_event_diff(old, new):
    n = min(len(old), len(new))
    for k in range(n):
        a, b = old[k], new[k]
        if (a.time != b.time or a.kind != b.kind or a.branch != b.branch
                or a.u != b.u):
            return k
    return n


class PosteriorEvaluator:
    """Evaluates the posterior, resuming cached integrations when the
    proposal leaves an event prefix untouched.

    Numerical failures of the solver on a proposal are treated as
    rejections and counted in ``n_solver_failures`` rather than aborting
    the chain; they indicate proposals far outside the feasible region.
    """

    def __init__(self, counts, taxa, mode="sdlt", rule=DEFAULT_RULE,
                 options=None, prior_only=False, debug_check=False):
        self.counts = dict(counts)
        self.taxa = tuple(taxa)
        self.mode = mode
        self.rule = rule
        self.options = options if options is not None else SolverOptions(
            rtol=1e-6, atol=1e-8, keep_checkpoints=True)
        if not self.options.keep_checkpoints:
            self.options = replace(self.options, keep_checkpoints=True)
        self.prior_only = prior_only
        self.debug_check = debug_check
        self.n_full = 0
        self.n_resumed = 0
        self.n_reused = 0
        self.n_solver_failures = 0

    # -- prior-only posterior ---------------------------------------------

    def _prior_parts(self, tree, model):
        lp = log_tree_prior(tree)
        if math.isfinite(lp):
            lp += log_prior_catastrophes(tree)
            lp += log_prior_severity(model.severity)
            lp += log_prior_rate(model.death)
            if self.mode == "sdlt":
                lp += log_prior_rate(model.transfer)
            lp += log_prior_obs_probs(model.obs_probs)
        if not math.isfinite(lp):
            return PosteriorParts(-math.inf, math.nan, -math.inf, None)
        return PosteriorParts(lp, 0.0, lp, None)

    # -- full and cached evaluation ---------------------------------------

    def _full(self, tree, model):
        self.n_full += 1
        return log_posterior(self.counts, self.taxa, tree, model,
                             mode=self.mode, rule=self.rule,
                             options=self.options, keep_checkpoints=True)

    def _resume(self, tree, model, prev_epf, index, events):
        self.n_resumed += 1
        ck = prev_epf.checkpoints[index]
        epf = expected_frequencies(
            tree, RateParams(1.0, model.death, model.transfer),
            kappa=model.severity, xi=prev_epf.xi, rule=prev_epf.rule,
            options=self.options, resume=(ck, events))
        epf = replace(epf, checkpoints=prev_epf.checkpoints[:index + 1]
                      + epf.checkpoints)
        return log_posterior(self.counts, self.taxa, tree, model,
                             mode=self.mode, rule=self.rule, epf=epf)

    def _cached(self, tree, model, prev: ChainState, change: str):
        prev_epf = prev.parts.epf
        if prev_epf is None or prev_epf.checkpoints is None:
            return self._full(tree, model)

        if change == "xi":
            xi = {t: float(p) for t, p in zip(self.taxa, model.obs_probs)}
            epf = prev_epf.with_observation(xi=xi)
            self.n_reused += 1
            return log_posterior(self.counts, self.taxa, tree, model,
                                 mode=self.mode, rule=self.rule, epf=epf)

        if change == "severity":
            if not tree.catastrophes:
                self.n_reused += 1
                return log_posterior(self.counts, self.taxa, tree, model,
                                     mode=self.mode, rule=self.rule,
                                     epf=prev_epf)
            first_cat = next(k for k, ev in enumerate(prev_epf.events)
                             if ev.kind == "cat")
            return self._resume(tree, model, prev_epf, first_cat,
                                prev_epf.events)

        if change == "tree":
            if (not _labels_stable(prev.tree, tree)
                    or tree.root_time != prev.tree.root_time):
                return self._full(tree, model)
            events = build_events(tree)
            d = _first_event_diff(prev_epf.events, events)
            if d == len(events) == len(prev_epf.events):
                self.n_reused += 1
                return log_posterior(self.counts, self.taxa, tree, model,
                                     mode=self.mode, rule=self.rule,
                                     epf=prev_epf)
            return self._resume(tree, model, prev_epf, d, events)

        return self._full(tree, model)

    def evaluate(self, tree, model, prev: Optional[ChainState] = None,
                 change: Optional[str] = None) -> PosteriorParts:
        if self.prior_only:
            return self._prior_parts(tree, model)
        try:
            if prev is None or change is None or change == "rates":
                parts = self._full(tree, model)
            elif self.debug_check:
                parts = self._cached(tree, model, prev, change)
                check = self._full(tree, model)
                if parts.log_posterior != check.log_posterior:
                    raise RuntimeError(
                        "cache mismatch: %r (cached) vs %r (full)"
                        % (parts.log_posterior, check.log_posterior))
            else:
                parts = self._cached(tree, model, prev, change)
        except IntegrationError:
            self.n_solver_failures += 1
            return PosteriorParts(-math.inf, math.nan, -math.inf, None)
        except ValueError:
            # invalid proposal geometry (e.g. a catastrophe landing
            # exactly on a branching time)
            return PosteriorParts(-math.inf, math.nan, -math.inf, None)
        return parts


# ---------------------------------------------------------------------------
# move kernels


def _reflect(x, lo, hi):
    span = hi - lo
    y = (x - lo) % (2.0 * span)
    if y > span:
        y = 2.0 * span - y
    return lo + y


def _scaled(value, rho, rng):
    v2 = rng.uniform(value / rho, value * rho)
    return v2, math.log(value) - math.log(v2)


def _kernel_death(state, ctx, rng):
    v2, lh = _scaled(state.model.death, ctx.cfg.scale_factor, rng)
    return Proposal(state.tree, replace(state.model, death=v2), lh, "rates")


def _kernel_transfer(state, ctx, rng):
    v2, lh = _scaled(state.model.transfer, ctx.cfg.scale_factor, rng)
    return Proposal(state.tree, replace(state.model, transfer=v2), lh,
                    "rates")


def _kernel_severity(state, ctx, rng):
    w = ctx.cfg.severity_window
    s2 = _reflect(state.model.severity + rng.uniform(-w, w),
                  SEVERITY_LO, SEVERITY_HI)
    return Proposal(state.tree, replace(state.model, severity=s2), 0.0,
                    "severity")


def _kernel_obs(state, ctx, rng):
    probs = state.model.obs_probs
    if probs is None:
        return None
    i = int(rng.integers(len(probs)))
    w = ctx.cfg.obs_window
    arr = np.array(probs, dtype=float)
    arr[i] = _reflect(arr[i] + rng.uniform(-w, w), 0.0, 1.0)
    return Proposal(state.tree, replace(state.model, obs_probs=arr), 0.0,
                    "xi")


def _with_cats(tree, cats):
    return Phylogeny(tree.parent, tree.children, tree.times, tree.leaf_names,
                     cats, tree.constraints, validate=False)


def _kernel_add_cat(state, ctx, rng):
    tree = state.tree
    lens = np.array([tree.branch_length(b)
                     for b in range(2, tree.n_nodes)])
    total = float(lens.sum())
    b = 2 + int(np.searchsorted(np.cumsum(lens), rng.random() * total,
                                side="right"))
    u = rng.random()
    if u <= 0.0 or b >= tree.n_nodes:
        return None
    n = len(tree.catastrophes)
    lh = (math.log(ctx.prob("delete_cat")) - math.log(ctx.prob("add_cat"))
          + math.log(total) - math.log(n + 1))
    cats = tree.catastrophes + (Catastrophe(b, u),)
    return Proposal(_with_cats(tree, cats), state.model, lh, "tree")


def _kernel_delete_cat(state, ctx, rng):
    tree = state.tree
    n = len(tree.catastrophes)
    if n == 0:
        return None
    k = int(rng.integers(n))
    total = tree.total_length()
    lh = (math.log(ctx.prob("add_cat")) - math.log(ctx.prob("delete_cat"))
          + math.log(n) - math.log(total))
    cats = tree.catastrophes[:k] + tree.catastrophes[k + 1:]
    return Proposal(_with_cats(tree, cats), state.model, lh, "tree")


def _edge_neighbours(tree, b):
    """Branches sharing a node with branch b, the infinite root edge
    included (its label 1 is an auto-reject target)."""
    out = []
    if not tree.is_leaf(b):
        out.extend(int(c) for c in tree.children[b])
    p = int(tree.parent[b])
    out.append(p)                      # the edge above the parent node
    c0, c1 = tree.children[p]
    out.append(int(c1) if int(c0) == b else int(c0))
    return out


def _kernel_move_cat(state, ctx, rng):
    tree = state.tree
    n = len(tree.catastrophes)
    if n == 0:
        return None
    k = int(rng.integers(n))
    cat = tree.catastrophes[k]
    options = _edge_neighbours(tree, cat.branch)
    b2 = options[int(rng.integers(len(options)))]
    if b2 == 1:
        return None
    lh = (math.log(len(options)) - math.log(len(_edge_neighbours(tree, b2)))
          + math.log(tree.branch_length(b2))
          - math.log(tree.branch_length(cat.branch)))
    cats = (tree.catastrophes[:k] + tree.catastrophes[k + 1:]
            + (Catastrophe(b2, cat.u),))
    return Proposal(_with_cats(tree, cats), state.model, lh, "tree")


def _movable_nodes(tree):
    out = list(range(1, tree.L))
    win = tree.node_constraint_windows()
    out.extend(i for i in win if i >= tree.L)
    return out


def _kernel_node_time(state, ctx, rng):
    tree = state.tree
    nodes = _movable_nodes(tree)
    i = nodes[int(rng.integers(len(nodes)))]
    win = tree.node_constraint_windows()
    wlo, whi = win.get(i, (-math.inf, math.inf))
    if i == 1:
        rlo, rhi = tree.root_window()
        lo = max(rlo, wlo)
        hi = min(rhi, whi)
    else:
        lo = max(float(tree.times[tree.parent[i]]), wlo)
        hi = whi
    if not tree.is_leaf(i):
        hi = min(hi, float(tree.times[tree.children[i, 0]]),
                 float(tree.times[tree.children[i, 1]]))
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        return None
    t2 = rng.uniform(lo, hi)
    counts = tree.cat_counts()
    lh = 0.0
    touched = [] if i == 1 else [i]
    if not tree.is_leaf(i):
        touched.extend(int(c) for c in tree.children[i])
    for b in touched:
        nb = counts.get(b, 0)
        if nb:
            old = tree.branch_length(b)
            new = (t2 - tree.times[tree.parent[b]] if b == i
                   else tree.times[b] - t2)
            if new <= 0.0:
                return None
            lh += nb * (math.log(new) - math.log(old))
    times = tree.times.copy()
    times[i] = t2
    try:
        new_tree = Phylogeny.from_arrays(tree.parent, tree.children, times,
                                         tree.leaf_names, tree.catastrophes,
                                         tree.constraints)
    except ValueError:
        return None
    return Proposal(new_tree, state.model, lh, "tree")


def _subtree_nodes(tree, node):
    out = []
    stack = [node]
    while stack:
        j = stack.pop()
        out.append(j)
        if not tree.is_leaf(j):
            stack.extend(int(c) for c in tree.children[j])
    return out


def _kernel_spr(state, ctx, rng):
    """Prune the parent of a random node and reattach it elsewhere.

    Catastrophes keep their (branch, relative position) coordinates
    throughout; the two root-adjacent cases relabel the orphaned root
    edge's catastrophes onto the edge that takes its place.  The
    Hastings ratio is the attach-window ratio times the catastrophe
    transport Jacobian.
    """
    tree = state.tree
    n = tree.n_nodes
    i = int(rng.integers(2, n))
    p = int(tree.parent[i])
    g = int(tree.parent[p])
    c0, c1 = (int(c) for c in tree.children[p])
    s = c1 if c0 == i else c0
    pruned = set(_subtree_nodes(tree, i))
    pruned.add(p)
    introot = s if p == 1 else 1

    def pa_int(j):
        return g if (p != 1 and j == s) else int(tree.parent[j])

    finite = [j for j in range(2, n) if j not in pruned and j != introot]
    n_opts = len(finite) + 1
    r = int(rng.integers(n_opts))
    target = None if r == n_opts - 1 else finite[r]

    t_i = float(tree.times[i])
    rlo, rhi = tree.root_window()

    def window(tgt):
        if tgt is None:
            return rlo, min(rhi, float(tree.times[introot]), t_i)
        lo = float(tree.times[pa_int(tgt)])
        return lo, min(float(tree.times[tgt]), t_i)

    lo, hi = window(target)
    if not hi > lo:
        return None
    t_new = rng.uniform(lo, hi)
    rev_lo, rev_hi = window(None if p == 1 else s)
    if not rev_hi > rev_lo:
        return None
    lh = math.log(hi - lo) - math.log(rev_hi - rev_lo)

    parent = tree.parent.copy()
    children = tree.children.copy()
    times = tree.times.copy()
    times[p] = t_new

    # detach p, closing the gap
    if p != 1:
        children[g, 0 if children[g, 0] == p else 1] = s
        parent[s] = g
    else:
        parent[s] = 0
        children[0, 0] = s

    # reattach
    if target is None:
        parent[p] = 0
        children[0, 0] = p
        parent[introot] = p
        children[p, 0] = i
        children[p, 1] = introot
    else:
        pj = pa_int(target)
        children[pj, 0 if children[pj, 0] == target else 1] = p
        parent[target] = p
        parent[p] = pj
        children[p, 0] = i
        children[p, 1] = target

    relabel = {}
    if p == 1 and target is not None:
        relabel[s] = p          # the old root edge's cats follow p
    if p != 1 and target is None:
        relabel[p] = introot    # p becomes root; its cats drop onto the
                                # edge above the old root
    new_cats = []
    for c in tree.catastrophes:
        nb = relabel.get(c.branch, c.branch)
        new_cats.append(Catastrophe(nb, c.u))
        old_len = float(tree.times[c.branch]
                        - tree.times[tree.parent[c.branch]])
        new_len = float(times[nb] - times[parent[nb]])
        if not new_len > 0.0:
            return None
        lh += math.log(new_len) - math.log(old_len)

    try:
        new_tree = Phylogeny.from_arrays(parent, children, times,
                                         tree.leaf_names, new_cats,
                                         tree.constraints)
    except ValueError:
        return None
    return Proposal(new_tree, state.model, lh, "tree")


KERNELS = {
    "death": _kernel_death,
    "transfer": _kernel_transfer,
    "severity": _kernel_severity,
    "obs": _kernel_obs,
    "add_cat": _kernel_add_cat,
    "delete_cat": _kernel_delete_cat,
    "move_cat": _kernel_move_cat,
    "node_time": _kernel_node_time,
    "spr": _kernel_spr,
}


class _MoveContext:
    def __init__(self, cfg, probs):
        self.cfg = cfg
        self._probs = probs

    def prob(self, name):
        return self._probs[name]


def normalized_moves(cfg: KernelConfig, has_obs: bool):
    """Active kernel names with their normalized selection probabilities."""
    probs = dict(DEFAULT_MOVE_PROBS if cfg.move_probs is None
                 else cfg.move_probs)
    if cfg.mode == "sd":
        probs.pop("transfer", None)
    if not has_obs:
        probs.pop("obs", None)
    probs = {k: float(v) for k, v in probs.items() if v > 0.0}
    unknown = set(probs) - set(KERNELS)
    if unknown:
        raise ValueError("unknown move kernels: %s" % ", ".join(sorted(unknown)))
    if not probs:
        raise ValueError("no active move kernels")
    z = sum(probs.values())
    return {k: v / z for k, v in probs.items()}


# ---------------------------------------------------------------------------
# the chain


def mh_step(state: ChainState, kernel: str, evaluator: PosteriorEvaluator,
            ctx: _MoveContext, rng):
    """One Metropolis-Hastings update; returns (state, accepted)."""
    prop = KERNELS[kernel](state, ctx, rng)
    if prop is None:
        return state, False
    parts = evaluator.evaluate(prop.tree, prop.model, state, prop.change)
    if not math.isfinite(parts.log_posterior):
        return state, False
    log_alpha = (parts.log_posterior - state.parts.log_posterior
                 + prop.log_hastings)
    if log_alpha >= 0.0 or rng.random() < math.exp(log_alpha):
        return ChainState(prop.tree, prop.model, parts), True
    return state, False


@dataclass
class ChainResult:
    columns: list
    rows: list                       # one list of floats per sample
    trees: list                      # Phylogeny per sample
    accept: dict                     # kernel -> (proposed, accepted)
    state: ChainState
    evaluator: PosteriorEvaluator


def run_chain(counts, taxa, tree, model, cfg: KernelConfig,
              rule=DEFAULT_RULE, callback=None) -> ChainResult:
    """Run the chain from (tree, model); deterministic given cfg.seed."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    evaluator = PosteriorEvaluator(
        counts, taxa, mode=cfg.mode, rule=rule,
        options=cfg.solver_options(), prior_only=cfg.prior_only,
        debug_check=cfg.debug_no_cache)
    parts = evaluator.evaluate(tree, model)
    if not math.isfinite(parts.log_posterior):
        raise ValueError("initial state has zero posterior density")
    state = ChainState(tree, model, parts)

    has_obs = model.obs_probs is not None
    probs = normalized_moves(cfg, has_obs)
    names = sorted(probs)
    cum = np.cumsum([probs[k] for k in names])
    ctx = _MoveContext(cfg, probs)

    taxa = tuple(taxa)
    columns = ["iteration", "log_posterior", "log_likelihood", "log_prior",
               "death", "transfer", "severity", "n_cats", "root_time"]
    if has_obs:
        columns += ["xi_%s" % t for t in taxa]
    rows = []
    trees = []
    accept = {k: [0, 0] for k in names}

    def record(it, st):
        row = [float(it), st.parts.log_posterior,
               st.parts.log_likelihood, st.parts.log_prior,
               st.model.death, st.model.transfer, st.model.severity,
               float(len(st.tree.catastrophes)), st.tree.root_time]
        if has_obs:
            row.extend(float(p) for p in st.model.obs_probs)
        rows.append(row)
        trees.append(st.tree)

    if cfg.burn_in == 0:
        record(0, state)

    for it in range(1, cfg.iterations + 1):
        k = names[int(np.searchsorted(cum, rng.random()))]
        accept[k][0] += 1
        state, ok = mh_step(state, k, evaluator, ctx, rng)
        if ok:
            accept[k][1] += 1
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            record(it, state)
            if callback is not None:
                callback(it, state)

    return ChainResult(columns, rows, trees,
                       {k: tuple(v) for k, v in accept.items()},
                       state, evaluator)


# ---------------------------------------------------------------------------
# initial states


def random_tree(taxa, constraints, rng, tries=200):
    """A random topology + times satisfying the calibration constraints.

    Pairs of clusters are merged uniformly at random, skipping merges
    that would break a required clade; merge times are drawn bottom-up
    inside the admissible windows.  Retries until the built tree passes
    the full constraint check.
    """
    taxa = tuple(taxa)
    L = len(taxa)
    if L < 2:
        raise ValueError("need at least two taxa")
    clades = [frozenset(c.leaves) for c in constraints
              if c.kind == "clade" and c.monophyly]
    windows = {}
    for c in constraints:
        if c.kind == "clade" and (c.lower is not None or c.upper is not None):
            windows[frozenset(c.leaves)] = (
                -math.inf if c.lower is None else c.lower,
                math.inf if c.upper is None else c.upper)
    leaf_win = {c.leaves[0]: (c.lower, c.upper) for c in constraints
                if c.kind == "leaf"}
    root_con = [c for c in constraints if c.kind == "root"]
    if not root_con or root_con[0].lower is None:
        raise ValueError("a root window with a lower bound is required")
    rlo = float(root_con[0].lower)
    rhi = float(root_con[0].upper) if root_con[0].upper is not None \
        else math.inf

    def ok_merge(a, b):
        u = a | b
        for c in clades:
            if c & u and not (u <= c or c <= a or c <= b):
                return False
        return True

    for _ in range(tries):
        leaf_times = {}
        for t in taxa:
            if t in leaf_win:
                lo, hi = leaf_win[t]
                if lo is None or hi is None or not math.isfinite(lo) \
                        or not math.isfinite(hi):
                    raise ValueError("relaxed leaf %r needs a finite window"
                                     % t)
                leaf_times[t] = rng.uniform(lo, hi)
            else:
                leaf_times[t] = 0.0
        # node ids: leaves L..2L-1 in taxa order, internals 2L-2 downward
        clusters = {frozenset((t,)): (L + k, leaf_times[t])
                    for k, t in enumerate(taxa)}
        parent = np.full(2 * L, -1, dtype=np.int32)
        children = np.full((2 * L, 2), -1, dtype=np.int32)
        times = np.zeros(2 * L)
        times[0] = -math.inf
        for node, tt in clusters.values():
            times[node] = tt
        next_id = L - 1
        okay = True
        while len(clusters) > 1:
            keys = sorted(clusters, key=sorted)
            pairs = [(a, b) for ai, a in enumerate(keys)
                     for b in keys[ai + 1:] if ok_merge(a, b)]
            if not pairs:
                okay = False
                break
            a, b = pairs[int(rng.integers(len(pairs)))]
            na, ta = clusters.pop(a)
            nb, tb = clusters.pop(b)
            u = a | b
            lo, hi = rlo, min(ta, tb)
            if u in windows:
                lo = max(lo, windows[u][0])
                hi = min(hi, windows[u][1])
            if len(clusters) == 0:      # this merge creates the root
                hi = min(hi, rhi)
            if not hi > lo:
                okay = False
                break
            tm = rng.uniform(lo, hi)
            node = next_id
            next_id -= 1
            times[node] = tm
            parent[na] = node
            parent[nb] = node
            children[node, 0] = na
            children[node, 1] = nb
            clusters[u] = (node, tm)
        if not okay:
            continue
        root, _ = next(iter(clusters.values()))
        parent[root] = 0
        children[0, 0] = root
        try:
            tree = Phylogeny.from_arrays(parent, children, times, taxa,
                                         (), constraints)
        except ValueError:
            continue
        if tree.constraints_ok() and math.isfinite(log_tree_prior(tree)):
            return tree
    raise ValueError("could not build a constraint-satisfying tree in %d "
                     "tries" % tries)


def initial_model(mode="sdlt", with_obs=False, n_taxa=0):
    """Starting scalars: clipped prior-median rates, central severity."""
    obs = np.full(n_taxa, 0.5) if with_obs else None
    return ModelParams(death=INIT_RATE,
                       transfer=0.0 if mode == "sd" else INIT_RATE,
                       severity=0.5, obs_probs=obs)


def initial_state(counts, taxa, constraints, cfg: KernelConfig, rng=None,
                  with_obs=None):
    """Random constraint-satisfying tree plus default scalars.

    Observation probabilities enter the state exactly when the data
    contain missing cells (or when forced via ``with_obs``).
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    if with_obs is None:
        with_obs = any(MISSING in p for p in counts)
    tree = random_tree(taxa, constraints, rng)
    model = initial_model(cfg.mode, with_obs, len(tuple(taxa)))
    return tree, model
