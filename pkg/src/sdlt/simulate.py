"""Forward simulation of binary trait evolution along a dated tree.

Event-driven (Gillespie) simulation: traits are born on lineages, each
copy dies or is transferred at constant per-copy rates, branchings copy
the trait set to both offspring lineages, and catastrophes kill copies
in a burst while sparking a compensating burst of fresh traits.  Every
copy is tracked as an instance with a parent link so transfer-derived
material can be stripped out afterwards without re-running the process.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .epf import RateParams, build_events, _xi_array
from .phylo import Phylogeny
from .traitdata import TraitMatrix


@dataclass(frozen=True)
class Instance:
    """One copy of one trait living on one branch.

    ``end`` is None while the copy survives to the end of its lineage
    (for a leaf branch: to the sampling time).  ``cause`` records why the
    copy stopped: "death", "cat" (killed in a burst), or "branch" (the
    lineage split and the copy was replaced by its two offspring copies).
    ``origin`` records how it started: "root", "birth", "branch",
    "transfer", or "cat".
    """

    uid: int
    trait: int
    branch: int
    start: float
    end: Optional[float]
    cause: Optional[str]
    origin: str
    parent: Optional[int]


@dataclass
class TraitHistory:
    """Full record of one trait: birth, per-copy lineage, event log.

    ``events`` holds (time, kind, branch, source) tuples with kind one of
    "death", "transfer", "cat-death", "cat-birth"; ``source`` is the donor
    branch for transfers and -1 otherwise.  ``presence`` is the set of
    leaf names carrying the trait at their sampling times; ``masked`` the
    leaves whose cell for this trait was hidden by the observation
    process.  ``taxa`` repeats the tree's leaf order so histories are
    self-contained.
    """

    trait: int
    origin: str
    born_branch: int
    born_time: float
    taxa: tuple
    events: list = field(default_factory=list)
    instances: list = field(default_factory=list)
    presence: frozenset = frozenset()
    masked: frozenset = frozenset()


@dataclass(frozen=True)
class SimConfig:
    """Inputs of one simulation run.

    ``severities`` is either a single float shared by every catastrophe
    or a sequence aligned with ``tree.catastrophes`` (which is sorted by
    (branch, u)).  ``obs_probs`` follows the same conventions as the
    likelihood layer: None means every cell is observed, otherwise a
    scalar, a mapping from leaf name, or a sequence in leaf-name order.
    """

    tree: Phylogeny
    params: RateParams
    severities: object = ()
    obs_probs: object = None
    seed: int = 0

    def severity_list(self):
        cats = self.tree.catastrophes
        sev = self.severities
        if isinstance(sev, (int, float)):
            out = [float(sev)] * len(cats)
        else:
            out = [float(s) for s in sev]
        if len(out) != len(cats):
            raise ValueError("need %d severities, got %d"
                             % (len(cats), len(out)))
        for s in out:
            if not 0.0 <= s < 1.0:
                raise ValueError("severity must lie in [0, 1)")
        return out


class _State:
    """Mutable bookkeeping for one run."""

    def __init__(self, rng):
        self.rng = rng
        self.instances = []          # uid -> Instance (append order)
        self.histories = {}          # trait id -> TraitHistory
        self.lineages = []           # active branch labels
        self.on_branch = {}          # branch -> {trait: uid} (live copies)
        self.live = []               # uids of live copies, swap-pop list
        self.live_pos = {}           # uid -> index into live
        self.next_trait = 0

    # -- copy-level operations --------------------------------------------

    def _add_live(self, uid):
        self.live_pos[uid] = len(self.live)
        self.live.append(uid)

    def _drop_live(self, uid):
        pos = self.live_pos.pop(uid)
        last = self.live.pop()
        if last != uid:
            self.live[pos] = last
            self.live_pos[last] = pos

    def new_copy(self, trait, branch, t, origin, parent):
        uid = len(self.instances)
        self.instances.append(Instance(uid, trait, branch, t, None, None,
                                       origin, parent))
        self.on_branch[branch][trait] = uid
        self._add_live(uid)
        return uid

    def end_copy(self, uid, t, cause):
        inst = self.instances[uid]
        self.instances[uid] = Instance(inst.uid, inst.trait, inst.branch,
                                       inst.start, t, cause, inst.origin,
                                       inst.parent)
        del self.on_branch[inst.branch][inst.trait]
        self._drop_live(uid)
        return inst

    def new_trait(self, branch, t, origin, taxa):
        trait = self.next_trait
        self.next_trait += 1
        self.histories[trait] = TraitHistory(trait, origin, branch, t, taxa)
        uid = self.new_copy(trait, branch, t, origin, None)
        return trait, uid

    # -- structural events -------------------------------------------------

    def add_lineage(self, branch):
        self.lineages.append(branch)
        self.on_branch[branch] = {}

    def remove_lineage(self, branch):
        self.lineages.remove(branch)
        return self.on_branch.pop(branch)

    def freeze_lineage(self, branch):
        """Leaf reached its sampling time: copies survive, stop evolving."""
        carried = self.remove_lineage(branch)
        for trait, uid in carried.items():
            self._drop_live(uid)
        return sorted(carried)


def _core_simulate(tree, params, severities, rng):
    lam, mu, beta = params.birth, params.death, params.transfer
    taxa = tree.leaf_names
    st = _State(rng)
    sev_of = {(c.branch, c.u): s
              for c, s in zip(tree.catastrophes, severities)}
    events = build_events(tree)
    end_time = tree.end_time

    def log(trait, t, kind, branch, source=-1):
        st.histories[trait].events.append((float(t), kind, int(branch),
                                           int(source)))

    def do_branching(node, t):
        copies = st.remove_lineage(node)
        kids = [int(c) for c in tree.children[node]]
        for k in kids:
            st.add_lineage(k)
        for trait in sorted(copies):
            uid = copies[trait]
            inst = st.instances[uid]
            st.instances[uid] = Instance(inst.uid, inst.trait, inst.branch,
                                         inst.start, t, "branch",
                                         inst.origin, inst.parent)
            st._drop_live(uid)
            for k in kids:
                st.new_copy(trait, k, t, "branch", uid)

    def do_catastrophe(branch, t, kappa):
        # A burst is a compressed evolution window of virtual length
        # delta = -log(1-kappa)/mu on the struck lineage alone: its copies
        # die at rate mu, copies elsewhere keep transferring in at rate
        # beta/Lhat each (and can die and re-enter), new traits keep being
        # born onto it.  All other lineages are frozen for the duration.
        if kappa <= 0.0:
            return
        delta = -np.log1p(-kappa) / mu
        n_lin = len(st.lineages)
        donors = {}
        for lin in st.lineages:
            if lin == branch:
                continue
            for trait, uid in st.on_branch[lin].items():
                donors.setdefault(trait, []).append(uid)
        involved = sorted(set(donors) | set(st.on_branch[branch]))
        for trait in involved:
            uids = donors.get(trait, ())
            rate_in = beta * len(uids) / n_lin
            present = trait in st.on_branch[branch]
            s = 0.0
            while True:
                rate = mu if present else rate_in
                if rate <= 0.0:
                    break
                s += st.rng.exponential(1.0 / rate)
                if s >= delta:
                    break
                if present:
                    st.end_copy(st.on_branch[branch][trait], t, "cat")
                    log(trait, t, "cat-death", branch)
                    present = False
                else:
                    src = uids[st.rng.integers(len(uids))]
                    st.new_copy(trait, branch, t, "transfer", src)
                    log(trait, t, "transfer", branch,
                        source=st.instances[src].branch)
                    present = True
        # burst-born traits: only those still alive when the burst ends are
        # materialised (the others could never be observed or transfer out)
        n_new = st.rng.poisson(lam * kappa / mu)
        for _ in range(n_new):
            trait, _uid = st.new_trait(branch, t, "cat", taxa)
            log(trait, t, "cat-birth", branch)

    def do_freeze(branch):
        st.freeze_lineage(branch)

    def evolve_until(t, te):
        while True:
            n_lin = len(st.lineages)
            n_cop = len(st.live)
            total = lam * n_lin + (mu + beta) * n_cop
            if total <= 0.0:
                return
            t = t + st.rng.exponential(1.0 / total)
            if t >= te:
                return
            pick = st.rng.random() * total
            if pick < lam * n_lin:
                branch = st.lineages[st.rng.integers(n_lin)]
                st.new_trait(branch, t, "birth", taxa)
            else:
                uid = st.live[st.rng.integers(n_cop)]
                inst = st.instances[uid]
                if pick < lam * n_lin + mu * n_cop:
                    st.end_copy(uid, t, "death")
                    log(inst.trait, t, "death", inst.branch)
                else:
                    dest = st.lineages[st.rng.integers(n_lin)]
                    if inst.trait not in st.on_branch[dest]:
                        st.new_copy(inst.trait, dest, t, "transfer", uid)
                        log(inst.trait, t, "transfer", dest,
                            source=inst.branch)

    # stationary load on the root edge, then the root branches at once
    t1 = tree.root_time
    st.add_lineage(1)
    for _ in range(st.rng.poisson(lam / mu)):
        st.new_trait(1, t1, "root", taxa)
    do_branching(1, t1)

    t = t1
    for ev in events:
        evolve_until(t, ev.time)
        t = ev.time
        if ev.kind == "branch":
            do_branching(ev.branch, t)
        elif ev.kind == "cat":
            do_catastrophe(ev.branch, t, sev_of[(ev.branch, ev.u)])
        else:
            do_freeze(ev.branch)
    evolve_until(t, end_time)
    for branch in list(st.lineages):
        do_freeze(branch)

    # final presence per trait: live-at-sampling copies sit on leaf branches
    present = {trait: set() for trait in st.histories}
    by_trait = {trait: [] for trait in st.histories}
    for inst in st.instances:
        by_trait[inst.trait].append(inst)
        if inst.end is None and inst.cause is None:
            present[inst.trait].add(tree.leaf_name(inst.branch))
    for trait, hist in st.histories.items():
        hist.presence = frozenset(present[trait])
        hist.instances = by_trait[trait]
    return st


def _apply_missingness(histories, taxa, xi, rng):
    """Per-cell observation draws, in trait-id order for reproducibility."""
    for trait in sorted(histories):
        draws = rng.random(len(taxa))
        hidden = frozenset(name for name, d, x in zip(taxa, draws, xi)
                           if d >= x)
        histories[trait].masked = hidden


def _matrix_from_presence(taxa, columns):
    """columns: list of (label, presence set, masked set)."""
    names = []
    cols = []
    for label, presence, masked in columns:
        visible_ones = presence - masked
        if not visible_ones:
            continue
        col = np.zeros(len(taxa), dtype=np.int8)
        for i, taxon in enumerate(taxa):
            if taxon in masked:
                col[i] = -1
            elif taxon in presence:
                col[i] = 1
        names.append(label)
        cols.append(col)
    if cols:
        cells = np.stack(cols, axis=1)
    else:
        cells = np.zeros((len(taxa), 0), dtype=np.int8)
    return TraitMatrix(tuple(taxa), tuple(names), cells)


def gillespie_simulate(cfg: SimConfig, rng=None):
    """Run one simulation; returns (observed TraitMatrix, histories).

    The matrix holds every trait with at least one visible presence;
    hidden cells show as missing.  ``histories`` covers every trait ever
    born, observable or not, so datasets with transfers stripped can be
    replayed from the same run (see :func:`strip_transfers`).
    """
    if rng is None:
        seed = cfg.seed
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        rng = np.random.default_rng(seed)
    severities = cfg.severity_list()
    st = _core_simulate(cfg.tree, cfg.params, severities, rng)
    taxa = cfg.tree.leaf_names
    xi = _xi_array(cfg.obs_probs, taxa)
    _apply_missingness(st.histories, taxa, xi, rng)
    histories = [st.histories[k] for k in sorted(st.histories)]
    tm = _matrix_from_presence(
        taxa, [("t%d" % h.trait, h.presence, h.masked) for h in histories])
    return tm, histories


def strip_transfers(histories, cutoff=None):
    """Rebuild the observed matrix with transfer-derived copies removed.

    Drops every copy whose origin is a transfer after ``cutoff`` (all
    transfers when ``cutoff`` is None) together with everything descended
    from it, then reassembles presence and applies the stored per-trait
    observation masks.  The stochastic history is untouched, so the
    result is coupled to the original run.
    """
    if not histories:
        raise ValueError("no trait histories to strip")
    taxa = histories[0].taxa
    columns = []
    for hist in histories:
        removed = set()
        for inst in sorted(hist.instances, key=lambda i: i.uid):
            if inst.parent is not None and inst.parent in removed:
                removed.add(inst.uid)
            elif inst.origin == "transfer" and \
                    (cutoff is None or inst.start > cutoff):
                removed.add(inst.uid)
        presence = {_leaf_name(taxa, inst.branch)
                    for inst in hist.instances
                    if inst.end is None and inst.cause is None
                    and inst.uid not in removed}
        columns.append(("t%d" % hist.trait, presence, hist.masked))
    return _matrix_from_presence(taxa, columns)


def _leaf_name(taxa, branch):
    # leaf branches are labelled L..2L-1 with names in taxa order
    return taxa[branch - len(taxa)]


def replicate_seeds(master_seed, n):
    """Independent child seeds via seed-sequence spawning."""
    return np.random.SeedSequence(master_seed).spawn(n)


def simulate_replicates(cfg: SimConfig, n, keep_histories=False):
    """n independent replicates; seeds derived from cfg.seed by spawning."""
    out = []
    for seq in replicate_seeds(cfg.seed, n):
        rng = np.random.default_rng(seq)
        tm, hist = gillespie_simulate(cfg, rng=rng)
        out.append((tm, hist) if keep_histories else tm)
    return out
