"""Observed-data likelihoods and the posterior density.

Registered pattern counts are modelled two ways:

- Poisson: independent Poisson counts with the computed means, plus the
  "nothing else was registered" mass.  Uses the actual birth rate.
- Multinomial: counts conditioned on the registered total, which is the
  likelihood with the birth rate integrated out under its scale-free
  limit; the birth rate cancels, so it is evaluated at unit birth rate.

The posterior combines the multinomial likelihood with priors over the
dated tree, its catastrophes, the rates, the severity, and the per-taxon
observation probabilities.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .epf import EpfResult, RateParams, SolverOptions, expected_frequencies
from .patterns import DEFAULT_RULE, MISSING, remap_rule
from .phylo import Phylogeny, log_tree_prior

RATE_PRIOR_SHAPE = 1e-3
RATE_PRIOR_RATE = 1e-3
SEVERITY_LO = 0.25
SEVERITY_HI = 1.0
CAT_PRIOR_SHAPE = 1.5
CAT_PRIOR_RATE = 5e3


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Scalar model state for inference (birth rate marginalized out)."""

    death: float
    transfer: float = 0.0
    severity: float = 0.5
    obs_probs: Optional[np.ndarray] = None  # per taxon, data order; None = 1


def _permuted(pattern, posmap, width):
    out = [0] * width
    for k, v in enumerate(pattern):
        out[posmap[k]] = v
    return tuple(out)


def _pattern_arrays(counts, epf, taxa):
    patterns = list(counts.keys())
    ns = np.array([counts[p] for p in patterns], dtype=float)
    if np.any(ns < 0):
        raise ValueError("negative pattern count")
    posmap = epf._position_map(taxa)
    for p in patterns:
        q = _permuted(p, posmap, epf.width)
        if not epf.rule.registered(q):
            raise ValueError("pattern %r is not registered under the rule"
                             % (p,))
        if all(v == 0 or v == MISSING for v in p):
            raise ValueError("the all-absent pattern cannot be observed")
    x = epf.means(patterns, taxa=taxa)
    return ns, x


def poisson_loglik(counts, epf: EpfResult, taxa=None):
    """Independent-Poisson log likelihood of registered pattern counts.

    ``counts`` maps pattern tuples (entries 0, 1, or MISSING) to counts;
    ``taxa`` names the leaf order of those tuples when it differs from
    the epf result's order.
    """
    ll = -epf.registered_total
    if not counts:
        return ll
    ns, x = _pattern_arrays(counts, epf, taxa)
    for n, xq in zip(ns, x):
        if xq <= 0.0:
            if n > 0:
                return -math.inf
            continue
        ll += n * math.log(xq) - math.lgamma(n + 1.0)
    return ll


def multinomial_loglik(counts, epf: EpfResult, taxa=None):
    """Log likelihood of counts given the registered total (birth rate
    cancels)."""
    if not counts:
        return 0.0
    total = epf.registered_total
    if not total > 0.0:
        return -math.inf
    ns, x = _pattern_arrays(counts, epf, taxa)
    lt = math.log(total)
    ll = 0.0
    for n, xq in zip(ns, x):
        if xq <= 0.0:
            if n > 0:
                return -math.inf
            continue
        ll += n * (math.log(xq) - lt)
    return ll


def log_prior_rate(rate, shape=RATE_PRIOR_SHAPE, rate_param=RATE_PRIOR_RATE):
    """Diffuse Gamma prior density for a positive rate."""
    if not rate > 0.0:
        return -math.inf
    return (shape * math.log(rate_param) - math.lgamma(shape)
            + (shape - 1.0) * math.log(rate) - rate_param * rate)


def log_prior_severity(severity):
    if SEVERITY_LO <= severity < SEVERITY_HI:
        return -math.log(SEVERITY_HI - SEVERITY_LO)
    return -math.inf


def log_prior_obs_probs(obs_probs):
    if obs_probs is None:
        return 0.0
    arr = np.asarray(obs_probs, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        return -math.inf
    return 0.0


def log_prior_catastrophes(tree: Phylogeny, shape=CAT_PRIOR_SHAPE,
                           rate=CAT_PRIOR_RATE):
    """Joint density of the catastrophe count and placements.

    Catastrophes form a Poisson process along the branches whose
    intensity carries a Gamma(shape, rate) prior, integrated out in
    closed form.  The value is the configuration density over absolute
    placement times (constant in the positions), so sampling kernels
    that drag catastrophes along with branch-length changes must supply
    the corresponding length-ratio Jacobian themselves.  Summing this
    density over placements recovers a Negative Binomial count
    distribution.
    """
    n = len(tree.catastrophes)
    total = tree.total_length()
    return (math.lgamma(n + shape) - math.lgamma(shape)
            + shape * math.log(rate) - (n + shape) * math.log(total + rate))


def tree_leaf_order(tree: Phylogeny):
    """Taxon names in the order the pipeline assigns pattern bits."""
    sl = tree.slice_lineages(tree.end_time)
    return tuple(tree.leaf_name(b) for b in sl.branches)


@dataclass
class PosteriorParts:
    log_posterior: float
    log_likelihood: float
    log_prior: float
    epf: Optional[EpfResult]


def pattern_loglik(counts, taxa, tree, model, rule=DEFAULT_RULE,
                   options=None, epf=None, keep_checkpoints=False):
    """Multinomial log likelihood of pattern counts under one state.

    Returns ``(loglik, epf)`` so the solved frequencies can be reused.
    Pass a precomputed ``epf`` (from an identical state) to skip the
    ODE solve.  No priors are involved, so the tree needs no
    constraint windows.
    """
    taxa = tuple(taxa)
    if tree.L != len(taxa):
        raise ValueError("tree has %d leaves but data has %d taxa"
                         % (tree.L, len(taxa)))
    if epf is None:
        tree_taxa = tree_leaf_order(tree)
        order = {name: i for i, name in enumerate(tree_taxa)}
        posmap = [order[t] for t in taxa]
        xi = None
        if model.obs_probs is not None:
            xi = {t: float(p) for t, p in zip(taxa, model.obs_probs)}
        opts = options if options is not None else SolverOptions()
        if keep_checkpoints and not opts.keep_checkpoints:
            from dataclasses import replace as _rep
            opts = _rep(opts, keep_checkpoints=True)
        epf = expected_frequencies(
            tree, RateParams(1.0, model.death, model.transfer),
            kappa=model.severity, xi=xi, rule=remap_rule(rule, posmap),
            options=opts)
    return multinomial_loglik(counts, epf, taxa=taxa), epf


def log_posterior(counts, taxa, tree, model, mode="sdlt", rule=DEFAULT_RULE,
                  options=None, epf=None, keep_checkpoints=False):
    """Unnormalized log posterior of (tree, catastrophes, model scalars).

    ``counts`` maps pattern tuples in ``taxa`` order to counts.  ``mode``
    is "sdlt" or "sd"; the pure-Dollo mode pins the transfer rate at
    zero and drops its prior.  Pass a precomputed ``epf`` (from an
    identical state) to skip the ODE solve.
    """
    if mode not in ("sdlt", "sd"):
        raise ValueError("mode must be 'sdlt' or 'sd'")
    if mode == "sd" and model.transfer != 0.0:
        raise ValueError("pure-Dollo mode requires a zero transfer rate")
    taxa = tuple(taxa)
    if tree.L != len(taxa):
        raise ValueError("tree has %d leaves but data has %d taxa"
                         % (tree.L, len(taxa)))

    lp = log_tree_prior(tree)
    if math.isfinite(lp):
        lp += log_prior_catastrophes(tree)
        lp += log_prior_severity(model.severity)
        lp += log_prior_rate(model.death)
        if mode == "sdlt":
            lp += log_prior_rate(model.transfer)
        lp += log_prior_obs_probs(model.obs_probs)
    if not math.isfinite(lp):
        return PosteriorParts(-math.inf, math.nan, -math.inf, None)

    ll, epf = pattern_loglik(counts, taxa, tree, model, rule=rule,
                             options=options, epf=epf,
                             keep_checkpoints=keep_checkpoints)
    return PosteriorParts(lp + ll, ll, lp, epf)
