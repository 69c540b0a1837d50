"""glmgf: log-moment-generating functions of convex Gaussian functionals.

Estimates Phi(lambda) = lambda^-1 * ln E exp(lambda * F(g)) for convex
functions F of standard Gaussian vectors and audits, at desk scale, the
inequalities such functions satisfy: convexity of Phi, variance-based
sub-Gaussian and small-deviation bounds, annealed-replica properties of the
Sherrington-Kirkpatrick free energy, and the stochastic-control variational
representation of Phi.
"""

__version__ = "0.1.0"

from . import auditor, bdcontrol, functionals, gaussmc, harness, reporting, skmodel

__all__ = [
    "__version__",
    "auditor",
    "bdcontrol",
    "functionals",
    "gaussmc",
    "harness",
    "reporting",
    "skmodel",
]
