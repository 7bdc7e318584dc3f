"""Marginal negative log-likelihood of the grouped model and its derivatives.

All quantities are computed per group from a single Cholesky factorization
of the marginal covariance Omega_i = Z_i Diag(gamma) Z_i^T + Lambda_i and
assembled by summation.  The per-point factorization cache (`PointCache`)
is local to one evaluation and never shared.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import DomainError, NumericalError
from .problem import LMEProblem, ParamPoint, RelaxConfig

# Optional fault-injection hook used by the verification suite to prove
# that the derivative checks have teeth.  Never set outside tests.
_GRAD_FAULT = 0.0


def omega(problem: LMEProblem, group_index: int, gamma: np.ndarray) -> np.ndarray:
    """Marginal covariance Z_i Diag(gamma) Z_i^T + Lambda_i of one group."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (problem.q,):
        raise DomainError(f"gamma must have length {problem.q}")
    if np.any(gamma < 0):
        raise DomainError("gamma must be elementwise nonnegative")
    g = problem.groups[group_index]
    return (g.Z * gamma) @ g.Z.T + g.Lam


class PointCache:
    """Factorizations and recurring products at one (beta, gamma).

    Shared by the likelihood value, gradient, and Hessian so the Cholesky
    of each Omega_i is computed once per point.
    """

    def __init__(self, problem: LMEProblem, point: ParamPoint):
        self.problem = problem
        self.point = point
        gamma = np.clip(point.gamma, 0.0, None)
        self.oinv_r = []  # Omega_i^{-1} r_i,   r_i = X_i beta - Y_i
        self.oinv_X = []  # Omega_i^{-1} X_i
        self.oinv_Z = []  # Omega_i^{-1} Z_i
        self.resid = []
        self.logdet = []
        self.ZtOiZ = []  # Z_i^T Omega_i^{-1} Z_i
        self.d = []  # Z_i^T Omega_i^{-1} r_i
        for i, g in enumerate(problem.groups):
            om = (g.Z * gamma) @ g.Z.T + g.Lam
            try:
                c, low = cho_factor(om, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"group {i}: covariance factorization failed; "
                    "the supplied Lambda may be corrupted"
                ) from exc
            r = g.X @ point.beta - g.Y
            oinv_r = cho_solve((c, low), r)
            oinv_X = cho_solve((c, low), g.X)
            oinv_Z = cho_solve((c, low), g.Z)
            self.resid.append(r)
            self.oinv_r.append(oinv_r)
            self.oinv_X.append(oinv_X)
            self.oinv_Z.append(oinv_Z)
            self.logdet.append(2.0 * float(np.sum(np.log(np.diag(c)))))
            self.ZtOiZ.append(g.Z.T @ oinv_Z)
            self.d.append(g.Z.T @ oinv_r)


def neg_loglik(problem: LMEProblem, point: ParamPoint, cache: PointCache = None) -> float:
    """Marginal negative log-likelihood at (beta, gamma)."""
    cache = cache or PointCache(problem, point)
    total = 0.0
    for r, oinv_r, ld in zip(cache.resid, cache.oinv_r, cache.logdet):
        total += 0.5 * float(r @ oinv_r) + 0.5 * ld
    return total


def grad(problem: LMEProblem, point: ParamPoint, cache: PointCache = None):
    """Gradient of the negative log-likelihood: (d/dbeta, d/dgamma)."""
    cache = cache or PointCache(problem, point)
    g_beta = np.zeros(problem.p)
    g_gamma = np.zeros(problem.q)
    for g, oinv_r, ZtOiZ, d in zip(
        problem.groups, cache.oinv_r, cache.ZtOiZ, cache.d
    ):
        g_beta += g.X.T @ oinv_r
        g_gamma += 0.5 * (np.diag(ZtOiZ) - d ** 2)
    if _GRAD_FAULT:
        g_beta = g_beta + _GRAD_FAULT
    return g_beta, g_gamma


def _hess_blocks(problem: LMEProblem, cache: PointCache, drop_concave_term: bool):
    p, q = problem.p, problem.q
    Hbb = np.zeros((p, p))
    Hbg = np.zeros((p, q))
    Hgg = np.zeros((q, q))
    for g, oinv_X, oinv_Z, ZtOiZ, d in zip(
        problem.groups, cache.oinv_X, cache.oinv_Z, cache.ZtOiZ, cache.d
    ):
        Hbb += g.X.T @ oinv_X
        Hbg += -(g.X.T @ oinv_Z) * d
        Hgg += np.outer(d, d) * ZtOiZ
        if not drop_concave_term:
            Hgg -= 0.5 * ZtOiZ ** 2
    return Hbb, Hbg, Hgg


def _assemble(Hbb, Hbg, Hgg):
    top = np.hstack([Hbb, Hbg])
    bottom = np.hstack([Hbg.T, Hgg])
    H = np.vstack([top, bottom])
    return 0.5 * (H + H.T)


def hess(problem: LMEProblem, point: ParamPoint, cache: PointCache = None) -> np.ndarray:
    """Exact Hessian of the negative log-likelihood, assembled in
    (beta, gamma) block order."""
    cache = cache or PointCache(problem, point)
    return _assemble(*_hess_blocks(problem, cache, drop_concave_term=False))


def hess_psd_approx(problem: LMEProblem, point: ParamPoint, cache: PointCache = None) -> np.ndarray:
    """Positive semidefinite Hessian surrogate: the exact Hessian with its
    negative semidefinite gamma-gamma term dropped."""
    cache = cache or PointCache(problem, point)
    return _assemble(*_hess_blocks(problem, cache, drop_concave_term=True))


def log_barrier(gamma: np.ndarray, mu: float) -> float:
    """Barrier for the nonnegativity of gamma: -mu * sum(log(gamma/mu)) for
    mu > 0, the indicator of the nonnegative orthant for mu = 0."""
    if mu < 0:
        raise DomainError("barrier weight mu must be nonnegative")
    gamma = np.asarray(gamma, dtype=float)
    if mu == 0.0:
        return np.inf if np.any(gamma < 0) else 0.0
    if np.any(gamma <= 0):
        return np.inf
    return -mu * float(np.sum(np.log(gamma / mu)))


def coupling(d: np.ndarray, eta: float) -> float:
    """Quadratic tether (eta/2)||d||^2 between original and sparse variables."""
    if eta < 0:
        raise DomainError("eta must be nonnegative")
    d = np.asarray(d, dtype=float)
    return 0.5 * eta * float(d @ d)


def relaxed_objective(
    problem: LMEProblem,
    inner: ParamPoint,
    outer: ParamPoint,
    cfg: RelaxConfig,
    cache: PointCache = None,
) -> float:
    """Likelihood + barrier + coupling, evaluated at the inner point."""
    ll = neg_loglik(problem, inner, cache=cache)
    bar = log_barrier(inner.gamma, cfg.mu)
    coup = coupling(inner.stacked() - outer.stacked(), cfg.eta)
    return ll + bar + coup


def eta_bar(problem: LMEProblem) -> float:
    """Strong-convexity threshold of the coupling weight."""
    return problem.eta_bar()
