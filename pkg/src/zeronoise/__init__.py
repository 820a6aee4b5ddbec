"""Small-noise selection for degenerate SDEs.

Monte Carlo and monotone finite-difference solvers for the eps-perturbed
backward Kolmogorov equations, assumption checkers for the coefficients,
classical supersolution certificates and Feller diagnostics.
"""

from .coeffs import (CheckReport, CoefficientField, PerturbationFamily, check_degenerate_point,
                     check_exponents, check_holder, perturb, verify_perturbation_assumption)
from .errors import CFLError, DomainError, MonotonicityError
from .kolmogorov_fd import GridSpec, LatticeFunction, eps_sweep, semilimits, solve, step
from .mc_engine import (MCEstimate, PathEnsemble, estimate_fdd, estimate_u,
                        increment_moment_check, modulus_diagnostic, simulate)
from .payoffs import Payoff

__version__ = "0.1.0"
