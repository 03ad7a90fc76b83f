"""Expected pattern frequencies on a dated phylogeny.

The mean trait-pattern counts solve a linear ODE system over the pattern
space of the extant lineages.  Starting from the single-lineage
equilibrium just before the root split, the pipeline walks the tree's
event timeline (branchings, catastrophes, leaf sampling times), enlarges
or masks the pattern space at each event, and integrates the generator
between events with an adaptive Dormand-Prince scheme.

Everything is linear in the birth rate, so the pipeline runs at unit
birth rate and rescales once at the end; this keeps the adaptive solver's
step choices identical across birth rates and makes the scaling exact.
"""

import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional

import numpy as np

from . import kernels
from .patterns import (DEFAULT_RULE, MISSING, as_pattern, branch_expand,
                       registration_weights)
from .phylo import Phylogeny


@dataclass(frozen=True)
class RateParams:
    """Per-lineage birth rate, per-copy death rate, per-copy transfer rate."""

    birth: float
    death: float
    transfer: float = 0.0

    def __post_init__(self):
        if not (self.birth > 0.0 and math.isfinite(self.birth)):
            raise ValueError("birth rate must be positive and finite")
        if not (self.death > 0.0 and math.isfinite(self.death)):
            raise ValueError("death rate must be positive and finite")
        if not (self.transfer >= 0.0 and math.isfinite(self.transfer)):
            raise ValueError("transfer rate must be nonnegative and finite")

    @property
    def equilibrium_mean(self):
        return self.birth / self.death


@dataclass(frozen=True)
class SolverOptions:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 20000
    max_leaves: int = 24
    keep_checkpoints: bool = False


class IntegrationError(RuntimeError):
    def __init__(self, message, t_reached=None):
        super().__init__(message)
        self.t_reached = t_reached


@dataclass(frozen=True)
class Event:
    time: float
    kind: str        # "branch" | "cat" | "freeze"
    branch: int      # branch label (= offspring node); lineage it acts on
    u: float = 0.0   # relative position for catastrophes


_KIND_RANK = {"cat": 0, "branch": 1, "freeze": 2}


def build_events(tree):
    """Timeline between the root split and the last sampling time, sorted."""
    times = tree.times
    events = []
    internal_times = set()
    for j in range(2, tree.L):
        tj = float(times[j])
        internal_times.add(tj)
        events.append(Event(tj, "branch", j))
    end = tree.end_time
    for leaf in tree.leaves():
        tl = float(times[leaf])
        if tl < end:
            events.append(Event(tl, "freeze", leaf))
    for cat in tree.catastrophes:
        tc = float(cat.time(tree))
        if tc in internal_times:
            raise ValueError(
                "catastrophe on branch %d falls exactly on a branching time "
                "(t=%r); such ties are invalid" % (cat.branch, tc))
        events.append(Event(tc, "cat", cat.branch, cat.u))
    events.sort(key=lambda e: (e.time, _KIND_RANK[e.kind], e.branch, e.u))
    return events


@dataclass(frozen=True)
class Checkpoint:
    """Pipeline state right after ``event_index`` events have been applied."""

    time: float
    branches: tuple
    active: tuple
    x: np.ndarray
    event_index: int


def _xi_array(xi, taxa):
    n = len(taxa)
    if xi is None:
        return np.ones(n)
    if hasattr(xi, "keys"):
        missing = [t for t in taxa if t not in xi]
        if missing:
            raise ValueError("no observation probability for taxa: %s"
                             % ", ".join(missing))
        arr = np.array([float(xi[t]) for t in taxa])
    else:
        arr = np.asarray(xi, dtype=float)
        if arr.ndim == 0:
            arr = np.full(n, float(arr))
        if arr.shape != (n,):
            raise ValueError("observation probability array must have one "
                             "entry per taxon (in tree order)")
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("observation probabilities must lie in [0, 1]")
    return arr


def _clamp_nonnegative(x, atol, when):
    lo = float(x.min())
    if lo < -atol:
        raise IntegrationError(
            "pattern mean dropped to %g (below -atol) near t=%r; "
            "tighten solver tolerances" % (lo, when), t_reached=when)
    if lo < 0.0:
        np.clip(x, 0.0, None, out=x)
    x[0] = 0.0


@dataclass
class EpfResult:
    """Pattern means at the observation frontier, plus bookkeeping.

    ``taxa`` is the leaf order of the pattern bits (depth-first tree
    order); bit i-1 of an index corresponds to taxa[i-1].
    """

    taxa: tuple
    width: int
    unit_means: np.ndarray
    birth: float
    death: float
    transfer: float
    kappa: float
    xi: np.ndarray
    rule: object
    registered_total: float
    stats: list
    events: list
    checkpoints: Optional[list]

    @cached_property
    def binary_means(self):
        return self.birth * self.unit_means

    @property
    def n_matvec(self):
        return sum(s.n_matvec for s in self.stats)

    @property
    def per_interval_matvec(self):
        return [s.n_matvec for s in self.stats]

    def _position_map(self, taxa):
        if taxa is None:
            return list(range(self.width))
        if tuple(taxa) == self.taxa:
            return list(range(self.width))
        lookup = {name: i for i, name in enumerate(self.taxa)}
        try:
            return [lookup[t] for t in taxa]
        except KeyError as exc:
            raise ValueError("unknown taxon %r" % (exc.args[0],)) from None

    def _encode(self, pattern, posmap):
        pattern = as_pattern(pattern)
        if len(pattern) != self.width:
            raise ValueError("pattern length %d != %d taxa"
                             % (len(pattern), self.width))
        base = 0
        mask = 0
        factor = 1.0
        for k, v in enumerate(pattern):
            pos = posmap[k]
            if v == MISSING:
                mask |= 1 << pos
                factor *= 1.0 - self.xi[pos]
            elif v == 1:
                base |= 1 << pos
                factor *= self.xi[pos]
            elif v == 0:
                factor *= self.xi[pos]
            else:
                raise ValueError("pattern entries must be 0, 1, or MISSING")
        return base, mask, factor

    def means(self, patterns, taxa=None):
        """Mean frequencies of observed (possibly partial) patterns.

        ``taxa`` gives the leaf order of the supplied patterns when it
        differs from ``self.taxa``.
        """
        posmap = self._position_map(taxa)
        n = len(patterns)
        bases = np.empty(n, dtype=np.int64)
        masks = np.empty(n, dtype=np.int64)
        factors = np.empty(n)
        for i, pat in enumerate(patterns):
            bases[i], masks[i], factors[i] = self._encode(pat, posmap)
        sums = kernels.subset_sums(self.unit_means, bases, masks)
        return self.birth * factors * sums

    def mean(self, pattern, taxa=None):
        return float(self.means([pattern], taxa=taxa)[0])

    def with_observation(self, xi=None, rule=None):
        """Same pipeline output under a different observation layer."""
        new_rule = self.rule if rule is None else rule
        new_xi = _xi_array(xi, self.taxa) if xi is not None else self.xi
        weights = registration_weights(new_rule, new_xi)
        total = self.birth * float(weights @ self.unit_means)
        return replace(self, xi=new_xi, rule=new_rule, registered_total=total)


def expected_frequencies(tree, params, kappa=None, xi=None, rule=DEFAULT_RULE,
                         options=None, resume=None):
    """Run the full pipeline; returns an EpfResult.

    ``kappa`` is the shared catastrophe severity, required whenever the
    tree carries catastrophes.  ``xi`` gives per-taxon observation
    probabilities (mapping by name, array in tree order, or None for
    fully observed).  ``resume`` is an internal fast path: a
    ``(Checkpoint, events)`` pair from a previous run over the same tree
    shape, restarted after the checkpoint's events.
    """
    opts = options if options is not None else SolverOptions()
    L = tree.L
    if L > opts.max_leaves:
        gib = (1 << L) * 8.0 * 12.0 / 2.0 ** 30
        raise ValueError(
            "%d leaves means 2^%d pattern slots (roughly %.1f GiB of work "
            "arrays); raise SolverOptions.max_leaves if this is intended"
            % (L, L, gib))
    if tree.catastrophes and kappa is None:
        raise ValueError("tree has catastrophes; a severity kappa is required")
    kap = 0.0 if kappa is None else float(kappa)
    if not (0.0 <= kap < 1.0):
        raise ValueError("catastrophe severity must lie in [0, 1)")
    death = params.death
    transfer = params.transfer
    end_time = tree.end_time

    record = opts.keep_checkpoints
    if resume is not None:
        ck, events = resume
        start = ck.event_index
        t = ck.time
        x = ck.x.copy()
        branches = list(ck.branches)
        active = list(ck.active)
        # only the resumed tail is recorded; the caller owns the prefix
        checkpoints = [] if record else None
    else:
        events = build_events(tree)
        start = 0
        t = float(tree.times[1])
        # single ancestral lineage at equilibrium, then the root split
        x = np.zeros(2)
        x[1] = 1.0 / death
        x = branch_expand(x, 1)
        branches = list(tree.children[1])
        active = [True, True]
        checkpoints = [Checkpoint(t, tuple(branches), tuple(active),
                                  x.copy(), 0)] if record else None

    stats = []

    def advance(target):
        nonlocal t
        tables = kernels.make_tables(len(branches), active)
        st = kernels.solve_interval_raw(x, t, target, tables, death, transfer,
                                        1.0, opts.rtol, opts.atol,
                                        opts.max_steps)
        if not st.ok:
            raise IntegrationError(
                "integration failed (%s) at t=%r on the interval ending %r"
                % (kernels.status_text(st.status), st.t_reached, target),
                t_reached=st.t_reached)
        _clamp_nonnegative(x, opts.atol, target)
        stats.append(st)
        t = target
        return tables

    for idx in range(start, len(events)):
        ev = events[idx]
        tables = advance(ev.time)
        pos = branches.index(ev.branch)
        if ev.kind == "branch":
            x = branch_expand(x, pos + 1)
            c1, c2 = tree.children[ev.branch]
            branches[pos:pos + 1] = [int(c1), int(c2)]
            active[pos:pos + 1] = [True, True]
        elif ev.kind == "cat":
            kernels.catastrophe_update(x, pos, tables, death, transfer,
                                       1.0, kap)
        else:
            active[pos] = False
        if record:
            checkpoints.append(Checkpoint(t, tuple(branches), tuple(active),
                                          x.copy(), idx + 1))
    advance(end_time)

    taxa = tuple(tree.leaf_name(b) for b in branches)
    xi_arr = _xi_array(xi, taxa)
    weights = registration_weights(rule, xi_arr)
    unit_total = float(weights @ x)

    return EpfResult(taxa=taxa, width=L, unit_means=x, birth=params.birth,
                     death=death, transfer=transfer, kappa=kap, xi=xi_arr,
                     rule=rule, registered_total=params.birth * unit_total,
                     stats=stats, events=events, checkpoints=checkpoints)


def generator_apply(x, params, active=None):
    """dx/dt for a state over a fixed lineage slice (testing hook)."""
    x = np.asarray(x, dtype=float)
    w = x.size.bit_length() - 1
    if 1 << w != x.size:
        raise ValueError("state length must be a power of two")
    tables = kernels.make_tables(w, active)
    return kernels.generator_matvec(x, tables, params.death, params.transfer,
                                    params.birth)


def solve_interval(x, t0, t1, params, active=None, options=None):
    """Integrate a fixed slice from t0 to t1; returns (state, stats)."""
    opts = options if options is not None else SolverOptions()
    out = np.array(x, dtype=float, copy=True)
    w = out.size.bit_length() - 1
    if 1 << w != out.size:
        raise ValueError("state length must be a power of two")
    tables = kernels.make_tables(w, active)
    st = kernels.solve_interval_raw(out, float(t0), float(t1), tables,
                                    params.death, params.transfer,
                                    params.birth, opts.rtol, opts.atol,
                                    opts.max_steps)
    if not st.ok:
        raise IntegrationError("integration failed (%s) at t=%r"
                               % (kernels.status_text(st.status),
                                  st.t_reached),
                               t_reached=st.t_reached)
    _clamp_nonnegative(out, opts.atol, t1)
    return out, st


def apply_catastrophe(x, position, kappa, params, active=None):
    """Severity-kappa catastrophe on the lineage at 1-based ``position``."""
    out = np.array(x, dtype=float, copy=True)
    w = out.size.bit_length() - 1
    if 1 << w != out.size:
        raise ValueError("state length must be a power of two")
    if not 1 <= position <= w:
        raise ValueError("position out of range")
    tables = kernels.make_tables(w, active)
    if int(position - 1) not in set(int(b) for b in tables.active_bits):
        raise ValueError("catastrophe on an extinct lineage")
    kernels.catastrophe_update(out, position - 1, tables, params.death,
                               params.transfer, params.birth, kappa)
    return out
