"""Value-function evaluation by damped interior-point Newton iterations.

For a fixed outer (sparse) point and fixed coupling/barrier weights, the
partially-minimized relaxed objective is strongly convex; its minimizer is
characterized by the stationarity system stacking the coupled likelihood
gradient and the complementarity condition v * gamma = mu.  A damped
Newton method with a fraction-to-boundary rule keeps gamma and v strictly
positive throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve

from .exceptions import ConvergenceError, DomainError, SolverError
from . import likelihood as lk
from .problem import LMEProblem, ParamPoint, RelaxConfig

FTB_FACTOR = 0.99
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100


@dataclass(frozen=True)
class KKTState:
    """Newton iterate: primal (beta, gamma) with gamma > 0 and dual v > 0."""

    beta: np.ndarray
    gamma: np.ndarray
    v: np.ndarray

    def point(self) -> ParamPoint:
        return ParamPoint(beta=self.beta, gamma=self.gamma)


@dataclass(frozen=True)
class ValueEval:
    """Result of one value-function evaluation."""

    value: float
    gradient: np.ndarray  # eta * (outer - minimizer)
    minimizer: ParamPoint
    dual: np.ndarray
    kkt_residual: float
    newton_iters: int


def default_state(problem: LMEProblem) -> KKTState:
    return KKTState(
        beta=np.zeros(problem.p),
        gamma=np.ones(problem.q),
        v=np.ones(problem.q),
    )


def kkt_residual(
    problem: LMEProblem,
    state: KKTState,
    outer: ParamPoint,
    cfg: RelaxConfig,
    cache: lk.PointCache = None,
) -> np.ndarray:
    """Stacked stationarity residual [grad_beta; grad_gamma - v; v*gamma - mu]."""
    g_beta, g_gamma = lk.grad(problem, state.point(), cache=cache)
    r1 = g_beta + cfg.eta * (state.beta - outer.beta)
    r2 = g_gamma + cfg.eta * (state.gamma - outer.gamma) - state.v
    r3 = state.v * state.gamma - cfg.mu
    return np.concatenate([r1, r2, r3])


def newton_system_jacobian(
    problem: LMEProblem,
    state: KKTState,
    cfg: RelaxConfig,
    use_psd_approx: bool,
    cache: lk.PointCache = None,
) -> np.ndarray:
    """Full (p+2q) x (p+2q) Jacobian of the stationarity system.

    Used by the direct-solve oracle tests; the production path solves the
    reduced system in `newton_direction`.
    """
    p, q = problem.p, problem.q
    hess_fn = lk.hess_psd_approx if use_psd_approx else lk.hess
    H = hess_fn(problem, state.point(), cache=cache) + cfg.eta * np.eye(p + q)
    J = np.zeros((p + 2 * q, p + 2 * q))
    J[: p + q, : p + q] = H
    J[p : p + q, p + q :] = -np.eye(q)
    J[p + q :, p : p + q] = np.diag(state.v)
    J[p + q :, p + q :] = np.diag(state.gamma)
    return J


def newton_direction(
    problem: LMEProblem,
    state: KKTState,
    outer: ParamPoint,
    cfg: RelaxConfig,
    use_psd_approx: bool = True,
    cache: lk.PointCache = None,
):
    """Newton step (dbeta, dgamma, dv) solving  J d = -G.

    The dual block is eliminated through the complementarity row, leaving a
    symmetric (p+q) system that is positive definite whenever the surrogate
    Hessian is used or eta exceeds the strong-convexity threshold.
    """
    if np.any(state.gamma <= 0) or np.any(state.v <= 0):
        raise DomainError("Newton state must have gamma > 0 and v > 0")
    p, q = problem.p, problem.q
    cache = cache or lk.PointCache(problem, state.point())
    g_beta, g_gamma = lk.grad(problem, state.point(), cache=cache)
    g1 = g_beta + cfg.eta * (state.beta - outer.beta)
    g2 = g_gamma + cfg.eta * (state.gamma - outer.gamma) - state.v
    g3 = state.v * state.gamma - cfg.mu

    Hbb, Hbg, Hgg = lk._hess_blocks(problem, cache, drop_concave_term=use_psd_approx)
    M = np.zeros((p + q, p + q))
    M[:p, :p] = Hbb + cfg.eta * np.eye(p)
    M[:p, p:] = Hbg
    M[p:, :p] = Hbg.T
    M[p:, p:] = Hgg + cfg.eta * np.eye(q) + np.diag(state.v / state.gamma)
    rhs = -np.concatenate([g1, g2 + g3 / state.gamma])
    try:
        if use_psd_approx:
            c = cho_factor(M, lower=True)
            d = cho_solve(c, rhs)
        else:
            d = solve(M, rhs, assume_a="sym")
        if not np.all(np.isfinite(d)):
            raise np.linalg.LinAlgError("non-finite direction")
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            "Newton system is singular; increase the coupling weight eta "
            "(it must exceed the strong-convexity threshold when the exact "
            "Hessian is used)"
        ) from exc
    dbeta, dgamma = d[:p], d[p:]
    dv = -(g3 + state.v * dgamma) / state.gamma
    return dbeta, dgamma, dv


def fraction_to_boundary(
    gamma: np.ndarray, dgamma: np.ndarray, v: np.ndarray, dv: np.ndarray
) -> float:
    """Damping factor keeping gamma + a*dgamma > 0 and v + a*dv > 0."""
    alpha = 1.0
    for x, dx in ((gamma, dgamma), (v, dv)):
        neg = dx < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-x[neg] / dx[neg])))
    return FTB_FACTOR * alpha


def central_path_ok(gamma: np.ndarray, v: np.ndarray) -> bool:
    """Whether (gamma, v) lies in the central-path neighborhood: the
    complementarity products deviate from their mean by at most half of it."""
    prod = gamma * v
    mean = float(np.sum(prod)) / prod.shape[0]
    return float(np.linalg.norm(prod - mean)) <= 0.5 * mean


def eval_value_function(
    problem: LMEProblem,
    outer: ParamPoint,
    cfg: RelaxConfig,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    warm_start: Optional[KKTState] = None,
    use_psd_approx: bool = True,
) -> ValueEval:
    """Value and gradient of the partially-minimized relaxed objective.

    Runs damped Newton at fixed mu until the stationarity residual drops
    below ``tol``.  The gradient is eta * (outer - minimizer).
    """
    if cfg.eta <= 0:
        raise DomainError("eta must be positive")
    if cfg.mu <= 0:
        raise DomainError("the barrier weight must be positive here")
    state = warm_start or default_state(problem)
    if np.any(state.gamma <= 0) or np.any(state.v <= 0):
        state = default_state(problem)

    cache = lk.PointCache(problem, state.point())
    res = kkt_residual(problem, state, outer, cfg, cache=cache)
    res_norm = float(np.linalg.norm(res))
    iters = 0
    while res_norm > tol and iters < max_iter:
        dbeta, dgamma, dv = newton_direction(
            problem, state, outer, cfg, use_psd_approx=use_psd_approx, cache=cache
        )
        alpha = fraction_to_boundary(state.gamma, dgamma, state.v, dv)
        # safeguard: back off if the damped step still blows up the residual
        for _ in range(21):
            trial = KKTState(
                beta=state.beta + alpha * dbeta,
                gamma=state.gamma + alpha * dgamma,
                v=state.v + alpha * dv,
            )
            trial_cache = lk.PointCache(problem, trial.point())
            trial_res = kkt_residual(problem, trial, outer, cfg, cache=trial_cache)
            trial_norm = float(np.linalg.norm(trial_res))
            if np.isfinite(trial_norm) and trial_norm <= 10.0 * res_norm:
                break
            alpha *= 0.5
        state, cache, res_norm = trial, trial_cache, trial_norm
        iters += 1

    minimizer = state.point()
    gradient = cfg.eta * (outer.stacked() - minimizer.stacked())
    value = lk.relaxed_objective(problem, minimizer, outer, cfg, cache=cache)
    result = ValueEval(
        value=value,
        gradient=gradient,
        minimizer=minimizer,
        dual=state.v,
        kkt_residual=res_norm,
        newton_iters=iters,
    )
    if res_norm > tol:
        raise ConvergenceError(
            f"inner Newton solve stopped at residual {res_norm:.3e} > {tol:.1e} "
            f"after {iters} iterations",
            best=result,
        )
    return result


def lipschitz_diagnostic(
    problem: LMEProblem, eval_result: ValueEval, cfg: RelaxConfig
) -> float:
    """Diagnostic bound eta/(eta - eta_bar) * (1 + ||H1^{-1} R||^2) on the
    local Lipschitz modulus of the solution map at the minimizer."""
    ebar = problem.eta_bar()
    if cfg.eta <= ebar:
        raise DomainError(
            f"the diagnostic requires eta > {ebar:.6g} (strong-convexity threshold)"
        )
    p = problem.p
    cache = lk.PointCache(problem, eval_result.minimizer)
    Hbb, Hbg, _ = lk._hess_blocks(problem, cache, drop_concave_term=False)
    H1 = Hbb + cfg.eta * np.eye(p)
    H1inv_R = np.linalg.solve(H1, Hbg)
    norm = float(np.linalg.norm(H1inv_R, 2)) if Hbg.size else 0.0
    return cfg.eta / (cfg.eta - ebar) * (1.0 + norm ** 2)
