"""Sparse feature selection in linear mixed effect models.

Fits the marginal likelihood of a grouped random effects model with a
sparsity-inducing penalty on both the fixed effect coefficients and the
random effect variances, via a smooth relaxation whose partial minimum is
differentiable. Offers plain proximal gradient descent, proximal descent
on the relaxed value function, and two relaxation solvers with an interior
point inner loop.
"""

from .algorithms import (
    SolveReport,
    SolverConfig,
    bic,
    msr3,
    msr3_fast,
    pgd_naive,
    pgd_value,
    select_eta,
)
from .exceptions import (
    ConvergenceError,
    DomainError,
    LmeSelectError,
    NumericalError,
    ProblemFormatError,
    SolverError,
)
from .likelihood import eta_bar, grad, hess, hess_psd_approx, neg_loglik
from .problem import (
    GroupBlock,
    LMEProblem,
    ParamPoint,
    RelaxConfig,
    load_problem,
    problem_from_dict,
    problem_to_dict,
    save_problem,
)
from .regularizers import Regularizer, alasso_weights_from_reference, penalty, prox
from .simulate import SimConfig, accuracy, default_config, f1_score, generate

__all__ = [
    "ConvergenceError",
    "DomainError",
    "GroupBlock",
    "LMEProblem",
    "LmeSelectError",
    "NumericalError",
    "ParamPoint",
    "ProblemFormatError",
    "Regularizer",
    "RelaxConfig",
    "SimConfig",
    "SolveReport",
    "SolverConfig",
    "SolverError",
    "accuracy",
    "alasso_weights_from_reference",
    "bic",
    "default_config",
    "eta_bar",
    "f1_score",
    "generate",
    "grad",
    "hess",
    "hess_psd_approx",
    "load_problem",
    "msr3",
    "msr3_fast",
    "neg_loglik",
    "penalty",
    "pgd_naive",
    "pgd_value",
    "problem_from_dict",
    "problem_to_dict",
    "prox",
    "save_problem",
    "select_eta",
]

__version__ = "1.0.0"
