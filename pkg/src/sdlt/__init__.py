"""Stochastic Dollo with lateral transfer on dated phylogenies.

Forward simulation, exact expected pattern frequencies via sparse ODE
systems, and Bayesian MCMC over trees, rates and catastrophes for binary
trait (presence/absence) data.
"""

__version__ = "0.1.0"

from .phylo import Phylogeny, Catastrophe, CladeConstraint, LineageSlice
from .patterns import RegistrationRule, DEFAULT_RULE
from .epf import RateParams, SolverOptions, expected_frequencies
from .likelihood import poisson_loglik, multinomial_loglik, log_posterior

__all__ = [
    "Phylogeny",
    "Catastrophe",
    "CladeConstraint",
    "LineageSlice",
    "RegistrationRule",
    "DEFAULT_RULE",
    "RateParams",
    "SolverOptions",
    "expected_frequencies",
    "poisson_loglik",
    "multinomial_loglik",
    "log_posterior",
    "__version__",
]
