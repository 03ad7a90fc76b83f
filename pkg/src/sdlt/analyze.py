"""Chain diagnostics, model comparison, and calibration checks.

Everything here consumes either a sample log (the scalar TSV plus the
tree-per-line file a chain writes) or plain arrays, and produces plain
data: delimited-text tables, never rendered graphics.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import treeio
from .epf import SolverOptions
from .likelihood import ModelParams, pattern_loglik
from .patterns import DEFAULT_RULE, MISSING
from .phylo import Phylogeny

SCALAR_FMT = "%.17g"


# ---------------------------------------------------------------------------
# effective sample size


def autocorrelation(series, max_lag=None):
    """Sample autocorrelation function (FFT based)."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 2:
        return np.ones(max(n, 1))
    xc = x - x.mean()
    m = 1
    while m < 2 * n:
        m *= 2
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real / n
    if acov[0] == 0.0:
        out = np.zeros(n)
        out[0] = 1.0
    else:
        out = acov / acov[0]
    if max_lag is not None:
        out = out[:max_lag + 1]
    return out


def ess(series):
    """Effective sample size via the initial-positive-sequence rule.

    Sums paired autocorrelations while the pair sums stay positive.  A
    constant series has no information about mixing; it is reported as
    fully independent with a warning.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 2:
        return float(n)
    if np.all(x == x[0]):
        warnings.warn("constant series: effective sample size is "
                      "reported as the sample count")
        return float(n)
    rho = autocorrelation(x)
    s = 0.0
    k = 0
    while 2 * k + 1 < n:
        g = rho[2 * k] + rho[2 * k + 1]
        if g <= 0.0:
            break
        s += g
        k += 1
    tau = max(2.0 * s - 1.0, 1e-12)
    return float(n / tau)


# ---------------------------------------------------------------------------
# sample logs


@dataclass
class SampleLog:
    """Thinned chain output: scalar columns plus one tree per sample."""

    columns: list
    rows: np.ndarray
    trees: list

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim == 1:
            self.rows = self.rows.reshape(0, len(self.columns))
        if self.rows.shape[0] != len(self.trees):
            raise ValueError("scalar rows and trees disagree in length")

    @classmethod
    def from_chain(cls, result):
        return cls(list(result.columns), np.array(result.rows, dtype=float),
                   list(result.trees))

    @property
    def n_samples(self):
        return self.rows.shape[0]

    def column(self, name):
        return self.rows[:, self.columns.index(name)]

    @property
    def xi_taxa(self):
        return tuple(c[3:] for c in self.columns if c.startswith("xi_"))

    def states(self):
        """(tree, ModelParams) per sample, for re-evaluating likelihoods."""
        cols = {c: k for k, c in enumerate(self.columns)}
        xi_cols = [k for c, k in cols.items() if c.startswith("xi_")]
        out = []
        for row, tree in zip(self.rows, self.trees):
            obs = np.array([row[k] for k in xi_cols]) if xi_cols else None
            out.append((tree, ModelParams(
                death=row[cols["death"]], transfer=row[cols["transfer"]],
                severity=row[cols["severity"]], obs_probs=obs)))
        return out

    def write(self, scalar_path, tree_path):
        with open(scalar_path, "w", encoding="utf-8") as fh:
            fh.write("\t".join(self.columns) + "\n")
            for row in self.rows:
                fh.write("\t".join(SCALAR_FMT % v for v in row) + "\n")
        with open(tree_path, "w", encoding="utf-8") as fh:
            for t in self.trees:
                fh.write(treeio.write_tree(t) + "\n")

    @classmethod
    def read(cls, scalar_path, tree_path, constraints=()):
        columns, rows = read_scalar_table(scalar_path)
        trees = treeio.read_trees(tree_path, constraints=constraints)
        return cls(columns, rows, trees)


def read_scalar_table(path):
    """Read a tab-separated numeric table; returns (columns, rows)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty table %r" % path)
    columns = lines[0].split("\t")
    rows = np.array([[float(v) for v in ln.split("\t")]
                     for ln in lines[1:]], dtype=float)
    if rows.size == 0:
        rows = rows.reshape(0, len(columns))
    return columns, rows


def write_table(path, columns, rows):
    """Delimited-text table (the package's plotting output format)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(str(c) for c in columns) + "\n")
        for row in rows:
            fh.write("\t".join(
                SCALAR_FMT % v if isinstance(v, float) else str(v)
                for v in row) + "\n")


def trace_summary(columns, rows, names=None):
    """Per-column mean, sd, ESS, and central 95% interval rows."""
    rows = np.asarray(rows, dtype=float)
    names = names or [c for c in columns if c != "iteration"]
    out = []
    for name in names:
        x = rows[:, columns.index(name)]
        lo, hi = np.quantile(x, [0.025, 0.975])
        out.append([name, float(x.mean()), float(x.std(ddof=1)),
                    ess(x), float(lo), float(hi)])
    return ["parameter", "mean", "sd", "ess", "q025", "q975"], out


# ---------------------------------------------------------------------------
# consensus trees


@dataclass
class ConsensusNode:
    clade: frozenset
    support: float
    mean_time: float
    mean_cats: int
    children: list


def consensus_tree(trees, threshold=0.5):
    """Majority-rule consensus with mean node times and cat counts.

    Keeps clades appearing in more than ``threshold`` of the samples;
    times and per-branch catastrophe counts are averaged over the
    samples containing the clade, counts rounded to the nearest whole
    catastrophe.  The result may contain polytomies.
    """
    if not trees:
        raise ValueError("no trees")
    n = len(trees)
    taxa = trees[0].leaf_names
    occurrences = {}
    for t in trees:
        if set(t.leaf_names) != set(taxa):
            raise ValueError("trees cover different taxon sets")
        counts = t.cat_counts()
        seen = {}
        for i in range(1, t.n_nodes):
            clade = t.clade(i) if i < t.L else frozenset((t.leaf_name(i),))
            seen[clade] = (float(t.times[i]), counts.get(i, 0))
        for clade, (tt, nc) in seen.items():
            rec = occurrences.setdefault(clade, [0, 0.0, 0.0])
            rec[0] += 1
            rec[1] += tt
            rec[2] += nc
    kept = []
    for clade, (cnt, tsum, csum) in occurrences.items():
        frac = cnt / n
        if frac > threshold or len(clade) == 1 or len(clade) == len(taxa):
            kept.append(ConsensusNode(clade, frac, tsum / cnt,
                                      int(round(csum / cnt)), []))
    kept.sort(key=lambda nd: (-len(nd.clade), sorted(nd.clade)))
    root = kept[0]
    for k, node in enumerate(kept[1:], start=1):
        for parent in reversed(kept[:k]):
            if node.clade < parent.clade:
                parent.children.append(node)
                break
    for node in kept:
        node.children.sort(key=lambda nd: sorted(nd.clade))
    return root


def render_consensus(node: ConsensusNode, digits=2):
    """One-line text form of a consensus tree (polytomies allowed)."""
    def annot(nd):
        parts = ["support=%.2f" % nd.support,
                 "t=%.*f" % (digits, nd.mean_time)]
        if nd.mean_cats:
            parts.append("cats=%d" % nd.mean_cats)
        return "[&" + ",".join(parts) + "]"

    def rec(nd):
        if not nd.children:
            name = next(iter(nd.clade)) if len(nd.clade) == 1 \
                else ",".join(sorted(nd.clade))
            return name + annot(nd)
        return "(" + ",".join(rec(c) for c in nd.children) + ")" + annot(nd)

    return rec(node) + ";"


# ---------------------------------------------------------------------------
# Bayes factors by the density-ratio (window proportion) route


@dataclass
class BayesFactorReport:
    log_bf: float                 # support for relaxing the constraint
    posterior_fraction: float
    prior_fraction: float
    window: tuple
    lower_bound: bool             # posterior window empty: log_bf is a floor

    @property
    def bf(self):
        return math.exp(self.log_bf)


def constraint_times(trees, constraint):
    """Per-sample value of the node time a calibration constrains.

    kind "root" reads the root time, "leaf" the named leaf's time, and
    "clade" the time of the leaf set's most recent common ancestor in
    each sampled tree.
    """
    if constraint.kind == "root":
        return np.array([t.root_time for t in trees])
    if constraint.kind == "leaf":
        name = constraint.leaves[0]
        return np.array([float(t.times[t.leaf_node(name)]) for t in trees])
    out = np.empty(len(trees))
    for k, t in enumerate(trees):
        out[k] = float(t.times[t.mrca(constraint.leaves)])
    return out


def savage_dickey(posterior_samples, prior_samples, value, window=50.0):
    """Bayes factor for relaxing a point constraint to a free parameter.

    Compares the posterior and prior probability of the +-``window``
    neighborhood of the constrained ``value``; their ratio estimates the
    density ratio at the constraint.  A posterior window with no samples
    only bounds the factor from below (flagged), using one notional
    sample.
    """
    post = np.asarray(posterior_samples, dtype=float)
    prior = np.asarray(prior_samples, dtype=float)
    if post.size == 0 or prior.size == 0:
        raise ValueError("need posterior and prior samples")
    lo, hi = value - window, value + window
    p_post = float(np.mean((post >= lo) & (post <= hi)))
    p_prior = float(np.mean((prior >= lo) & (prior <= hi)))
    if p_prior == 0.0:
        raise ValueError("no prior mass in the constraint window; widen "
                         "the window or run a longer prior chain")
    if p_post == 0.0:
        return BayesFactorReport(
            math.log(p_prior) - math.log(1.0 / post.size),
            0.0, p_prior, (lo, hi), True)
    return BayesFactorReport(math.log(p_prior) - math.log(p_post),
                             p_post, p_prior, (lo, hi), False)


# ---------------------------------------------------------------------------
# posterior predictive score


@dataclass
class PredictiveScore:
    score: float                  # log posterior-mean test likelihood
    se: float                     # Monte Carlo standard error of score
    n_samples: int
    ess_weights: float


def predictive_score(states, counts, taxa, rule=DEFAULT_RULE, options=None):
    """Log of the posterior-averaged test-set likelihood.

    ``states`` is a list of (tree, ModelParams) as produced by
    ``SampleLog.states``; ``counts`` are held-out pattern counts in
    ``taxa`` order.  The error estimate treats the per-sample weights as
    a correlated series (their ESS replaces the raw count).
    """
    if not states:
        raise ValueError("no posterior samples")
    if not counts:
        # empty product over test traits
        return PredictiveScore(0.0, 0.0, len(states), float(len(states)))
    opts = options if options is not None else SolverOptions(
        rtol=1e-6, atol=1e-8)
    lls = np.empty(len(states))
    for k, (tree, model) in enumerate(states):
        lls[k], _ = pattern_loglik(counts, taxa, tree, model, options=opts)
    top = np.max(lls)
    if not math.isfinite(top):
        return PredictiveScore(-math.inf, math.nan, len(states), 0.0)
    w = np.exp(lls - top)
    mean_w = float(w.mean())
    score = top + math.log(mean_w)
    n_eff = ess(w) if w.size > 1 else 1.0
    se = float(w.std(ddof=1) / (mean_w * math.sqrt(max(n_eff, 1.0)))) \
        if w.size > 1 else math.inf
    return PredictiveScore(score, se, len(states), float(n_eff))


# ---------------------------------------------------------------------------
# simulator calibration against the exact distribution


@dataclass
class PatternCheck:
    pattern: tuple
    mean: float
    stat: float
    critical: float

    @property
    def ok(self):
        return self.stat <= self.critical


@dataclass
class DistributionReport:
    checks: list
    n_replicates: int
    alpha: float

    @property
    def worst(self):
        return max(self.checks, key=lambda c: c.stat / c.critical)

    @property
    def passed(self):
        return all(c.ok for c in self.checks)


def _poisson_cdf(k, mean):
    # sum of pmf terms, stable for the small means used here
    term = math.exp(-mean)
    acc = term
    for j in range(1, k + 1):
        term *= mean / j
        acc += term
    return min(acc, 1.0)


def validate_distribution(replicates, epf, taxa=None, alpha=0.01,
                          patterns=None):
    """Per-pattern comparison of replicate counts with the exact law.

    ``replicates`` is a list of pattern->count maps from independent
    simulated datasets; each registered pattern's empirical count
    distribution is compared against Poisson with the exact mean by a
    KS statistic with a DKW critical value, Bonferroni-corrected to a
    familywise ``alpha``.
    """
    n_rep = len(replicates)
    if n_rep < 2:
        raise ValueError("need at least two replicates")
    if patterns is None:
        seen = set()
        for rep in replicates:
            seen.update(rep)
        patterns = sorted(seen)
    if not patterns:
        raise ValueError("no patterns to check")
    means = epf.means(patterns, taxa=taxa)
    m = len(patterns)
    crit = math.sqrt(math.log(2.0 * m / alpha) / (2.0 * n_rep))
    checks = []
    for pat, mean in zip(patterns, means):
        counts = np.array([rep.get(pat, 0) for rep in replicates])
        kmax = int(counts.max())
        stat = 0.0
        for k in range(kmax + 1):
            emp = float(np.mean(counts <= k))
            stat = max(stat, abs(emp - _poisson_cdf(k, float(mean))))
        checks.append(PatternCheck(tuple(pat), float(mean), stat, crit))
    return DistributionReport(checks, n_rep, alpha)


# ---------------------------------------------------------------------------
# train/test splitting


def split_columns(tm, seed):
    """Even random split of a matrix's columns into train and test."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = tm.n_traits
    perm = rng.permutation(n)
    half = n // 2
    train = sorted(int(j) for j in perm[:half])
    test = sorted(int(j) for j in perm[half:])
    return tm.select(train), tm.select(test)
