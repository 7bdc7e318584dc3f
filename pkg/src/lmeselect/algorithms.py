"""Outer solvers for sparse feature selection in mixed-effects models.

Four strategies over a shared report format:

- ``pgd_naive``      proximal gradient descent directly on the likelihood;
- ``pgd_value``      proximal gradient descent on the value function, with
                     a fixed step or backtracking line search;
- ``msr3``           hybrid: full interior-point solve of the subproblem,
                     then a prox step on the sparse variables, repeated;
- ``msr3_fast``      hybrid with the prox interleaved at every iterate
                     near the central path.

Plus BIC-based selection of the coupling weight and the consistency probe
used by the verification suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import inner as inner_mod
from . import likelihood as lk
from . import regularizers as rg
from .exceptions import ConvergenceError, DomainError, SolverError
from .problem import LMEProblem, ParamPoint, RelaxConfig

MAX_BACKTRACKS = 60

# barrier weight floor; without it the mu reduction rule can underflow to a
# denormal when a pinned gamma coordinate keeps the KKT residual above tol
MU_FLOOR = 1e-12

TERM_CONVERGED = "converged"
TERM_MAX_ITER = "max_iter"
TERM_GAMMA_MAX = "gamma_max_exceeded"


@dataclass(frozen=True)
class SolverConfig:
    """Shared solver knobs.

    ``step`` fixes the proximal gradient step; leave it None to use the
    backtracking line search with parameters (t0, theta, tau).  ``t0`` and
    ``prox_step`` default to 1/eta, the natural scale of the value
    function's gradient.  ``gamma_max`` defaults to 100 times the largest
    per-group sample variance of the outcomes.
    """

    eta: float = 3.0
    mu: float = 1e-2
    step: Optional[float] = None
    t0: Optional[float] = None
    theta: float = 0.5
    tau: float = 0.25
    prox_step: Optional[float] = None
    tol: float = 1e-6
    tol_inner: float = 1e-8
    max_iter_outer: int = 2000
    max_iter_inner: int = 100
    gamma_max: Optional[np.ndarray] = None
    use_psd_approx: bool = True

    def __post_init__(self):
        if not (0 < self.theta < 1) or not (0 < self.tau < 1):
            raise DomainError("theta and tau must lie in (0, 1)")
        if self.tol <= 0:
            raise DomainError("tol must be positive")

    def effective_t0(self) -> float:
        return self.t0 if self.t0 is not None else 1.0 / self.eta

    def effective_prox_step(self) -> float:
        return self.prox_step if self.prox_step is not None else 1.0 / self.eta

    def gamma_cap(self, problem: LMEProblem) -> np.ndarray:
        if self.gamma_max is not None:
            return np.broadcast_to(
                np.asarray(self.gamma_max, dtype=float), (problem.q,)
            )
        return 100.0 * problem.y_sample_variance_max() * np.ones(problem.q)


@dataclass
class SolveReport:
    """Final estimates, masks, iterate trace, and timing for one solve."""

    beta_tilde: np.ndarray
    gamma_tilde: np.ndarray
    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    beta_mask: np.ndarray
    gamma_mask: np.ndarray
    termination: str
    trace: list = field(default_factory=list)
    total_seconds: float = 0.0
    algorithm: str = ""

    @property
    def converged(self) -> bool:
        return self.termination == TERM_CONVERGED

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "beta_tilde": self.beta_tilde.tolist(),
            "gamma_tilde": self.gamma_tilde.tolist(),
            "beta_hat": self.beta_hat.tolist(),
            "gamma_hat": self.gamma_hat.tolist(),
            "beta_mask": self.beta_mask.tolist(),
            "gamma_mask": self.gamma_mask.tolist(),
            "termination": self.termination,
            "total_seconds": self.total_seconds,
            "trace": self.trace,
        }


def _split(w: np.ndarray, p: int):
    return w[:p], w[p:]


def _prox_sparse(reg: rg.Regularizer, w: np.ndarray, step: float, q: int) -> np.ndarray:
    return rg.prox(reg, rg.ProxRequest(point=w, step=step, nonneg_tail=True, tail=q))


def _report(problem, w, x_hat, termination, trace, t_start, algorithm) -> SolveReport:
    beta_t, gamma_t = _split(w, problem.p)
    beta_h, gamma_h = _split(x_hat, problem.p)
    return SolveReport(
        beta_tilde=beta_t,
        gamma_tilde=gamma_t,
        beta_hat=beta_h,
        gamma_hat=gamma_h,
        beta_mask=rg.select_mask(beta_t),
        gamma_mask=rg.select_mask(gamma_t),
        termination=termination,
        trace=trace,
        total_seconds=time.perf_counter() - t_start,
        algorithm=algorithm,
    )


def _initial_point(problem: LMEProblem) -> np.ndarray:
    return np.concatenate([np.zeros(problem.p), np.ones(problem.q)])


def pgd_naive(
    problem: LMEProblem,
    reg: rg.Regularizer,
    cfg: SolverConfig,
    warm: Optional["SolveReport"] = None,
) -> SolveReport:
    """Proximal gradient descent on the marginal likelihood itself."""
    t_start = time.perf_counter()
    p, q = problem.p, problem.q
    cap = cfg.gamma_cap(problem)
    if warm is None:
        x = _initial_point(problem)
    else:
        x = np.concatenate([warm.beta_tilde, np.clip(warm.gamma_tilde, 0.0, None)])

    def objective(w):
        beta, gamma = _split(w, p)
        return lk.neg_loglik(problem, ParamPoint(beta, gamma)) + rg.penalty(reg, w)

    fx = objective(x)
    trace = []
    termination = TERM_MAX_ITER
    for it in range(cfg.max_iter_outer):
        beta, gamma = _split(x, p)
        g_beta, g_gamma = lk.grad(problem, ParamPoint(beta, gamma))
        g = np.concatenate([g_beta, g_gamma])
        if cfg.step is not None:
            t = cfg.step
            w = _prox_sparse(reg, x - t * g, t, q)
            fw = objective(w)
        else:
            t = cfg.effective_t0()
            accepted = False
            for _ in range(MAX_BACKTRACKS):
                w = _prox_sparse(reg, x - t * g, t, q)
                fw = objective(w)
                dd = float(np.sum((w - x) ** 2))
                if fw <= fx - cfg.tau * t * dd:
                    accepted = True
                    break
                t *= cfg.theta
            if not accepted:
                raise SolverError(
                    f"line search failed after {MAX_BACKTRACKS} reductions at iteration {it}"
                )
        move = float(np.linalg.norm(w - x))
        trace.append(
            {
                "iter": it,
                "objective": fw,
                "residual": move,
                "mu": 0.0,
                "step": t,
                "time": time.perf_counter() - t_start,
            }
        )
        x, fx = w, fw
        if np.any(_split(x, p)[1] > cap):
            termination = TERM_GAMMA_MAX
            break
        if move <= cfg.tol:
            termination = TERM_CONVERGED
            break
    return _report(problem, x, x, termination, trace, t_start, "pgd")


def pgd_value(problem: LMEProblem, reg: rg.Regularizer, cfg: SolverConfig) -> SolveReport:
    """Proximal gradient descent on the value function at fixed eta and mu."""
    t_start = time.perf_counter()
    p, q = problem.p, problem.q
    cap = cfg.gamma_cap(problem)
    rcfg = RelaxConfig(eta=cfg.eta, mu=cfg.mu, eta_bar=problem.eta_bar())
    w = _initial_point(problem)
    warm = None

    def evaluate(point_vec, warm_state):
        beta, gamma = _split(point_vec, p)
        ev = inner_mod.eval_value_function(
            problem,
            ParamPoint(beta, gamma),
            rcfg,
            tol=cfg.tol_inner,
            max_iter=cfg.max_iter_inner,
            warm_start=warm_state,
            use_psd_approx=cfg.use_psd_approx,
        )
        return ev, ev.value + rg.penalty(reg, point_vec)

    ev, phi = evaluate(w, warm)
    warm = inner_mod.KKTState(
        beta=ev.minimizer.beta, gamma=ev.minimizer.gamma, v=ev.dual
    )
    trace = []
    termination = TERM_MAX_ITER
    for it in range(cfg.max_iter_outer):
        if cfg.step is not None:
            t = cfg.step
            w_new = _prox_sparse(reg, w - t * ev.gradient, t, q)
            ev_new, phi_new = evaluate(w_new, warm)
        else:
            t = cfg.effective_t0()
            accepted = False
            for _ in range(MAX_BACKTRACKS):
                w_new = _prox_sparse(reg, w - t * ev.gradient, t, q)
                ev_new, phi_new = evaluate(w_new, warm)
                dd = float(np.sum((w_new - w) ** 2))
                if phi_new <= phi - cfg.tau * t * dd:
                    accepted = True
                    break
                t *= cfg.theta
            if not accepted:
                raise SolverError(
                    f"line search failed after {MAX_BACKTRACKS} reductions at iteration {it}"
                )
        move = float(np.linalg.norm(w_new - w))
        trace.append(
            {
                "iter": it,
                "objective": phi_new,
                "objective_prev": phi,
                "residual": move,
                "mu": cfg.mu,
                "step": t,
                "time": time.perf_counter() - t_start,
            }
        )
        w, ev, phi = w_new, ev_new, phi_new
        warm = inner_mod.KKTState(
            beta=ev.minimizer.beta, gamma=ev.minimizer.gamma, v=ev.dual
        )
        if np.any(_split(w, p)[1] > cap):
            termination = TERM_GAMMA_MAX
            break
        if move <= cfg.tol:
            termination = TERM_CONVERGED
            break
    return _report(
        problem, w, ev.minimizer.stacked(), termination, trace, t_start, "pgd_value"
    )


def _newton_sweep_state(problem, state, outer_vec, eta, mu, use_psd_approx, cache=None):
    """One Newton step with the fraction-to-boundary rule."""
    p = problem.p
    beta_o, gamma_o = _split(outer_vec, p)
    rcfg = RelaxConfig(eta=eta, mu=mu)
    dbeta, dgamma, dv = inner_mod.newton_direction(
        problem,
        state,
        ParamPoint(beta_o, gamma_o),
        rcfg,
        use_psd_approx=use_psd_approx,
        cache=cache,
    )
    alpha = inner_mod.fraction_to_boundary(state.gamma, dgamma, state.v, dv)
    return inner_mod.KKTState(
        beta=state.beta + alpha * dbeta,
        gamma=state.gamma + alpha * dgamma,
        v=state.v + alpha * dv,
    )


def _kkt_norm(problem, state, outer_vec, eta, mu, cache=None) -> float:
    beta_o, gamma_o = _split(outer_vec, problem.p)
    res = inner_mod.kkt_residual(
        problem,
        state,
        ParamPoint(beta_o, gamma_o),
        RelaxConfig(eta=eta, mu=mu),
        cache=cache,
    )
    return float(np.linalg.norm(res))


def _warm_init(problem, warm: Optional[SolveReport]):
    """Starting (w, state) for the hybrid solvers, optionally from a
    previous solve on the same problem."""
    q = problem.q
    if warm is None:
        return _initial_point(problem), inner_mod.default_state(problem)
    w = np.concatenate([warm.beta_tilde, np.clip(warm.gamma_tilde, 0.0, None)])
    state = inner_mod.KKTState(
        beta=warm.beta_hat.copy(),
        gamma=np.maximum(warm.gamma_hat, 1e-8),
        v=np.ones(q),
    )
    return w, state


def msr3(
    problem: LMEProblem,
    reg: rg.Regularizer,
    cfg: SolverConfig,
    warm: Optional[SolveReport] = None,
) -> SolveReport:
    """Hybrid solver: interior-point subproblem solves alternated with prox
    steps on the sparse variables."""
    t_start = time.perf_counter()
    p, q = problem.p, problem.q
    cap = cfg.gamma_cap(problem)
    a = cfg.effective_prox_step()
    w, state0 = _warm_init(problem, warm)
    beta_p, gamma_p = state0.beta, state0.gamma
    trace = []
    termination = TERM_MAX_ITER
    for outer_it in range(cfg.max_iter_outer):
        v_p = np.ones(q)
        mu = max(float(v_p @ gamma_p) / (10.0 * q), MU_FLOOR)
        state = inner_mod.KKTState(beta=beta_p, gamma=np.maximum(gamma_p, 1e-12), v=v_p)
        change = np.inf
        inner_it = 0
        cache = lk.PointCache(problem, state.point())
        g_norm = _kkt_norm(problem, state, w, cfg.eta, mu, cache=cache)
        while (
            inner_it < cfg.max_iter_inner
            and g_norm > cfg.tol
            and change >= cfg.tol
        ):
            new_state = _newton_sweep_state(
                problem, state, w, cfg.eta, mu, cfg.use_psd_approx, cache=cache
            )
            if inner_mod.central_path_ok(new_state.gamma, new_state.v):
                mu = max(float(new_state.v @ new_state.gamma) / (10.0 * q), MU_FLOOR)
            change = max(
                float(np.linalg.norm(new_state.beta - state.beta)),
                float(np.linalg.norm(new_state.gamma - state.gamma)),
            )
            state = new_state
            cache = lk.PointCache(problem, state.point())
            g_norm = _kkt_norm(problem, state, w, cfg.eta, mu, cache=cache)
            inner_it += 1
        beta_p, gamma_p = state.beta, state.gamma
        w_new = _prox_sparse(reg, np.concatenate([beta_p, gamma_p]), a, q)
        progress = float(np.linalg.norm(w_new - w)) >= cfg.tol
        trace.append(
            {
                "iter": outer_it,
                "objective": lk.neg_loglik(problem, ParamPoint(*_split(w_new, p)))
                + rg.penalty(reg, w_new),
                "residual": float(np.linalg.norm(w_new - w)),
                "kkt_residual": g_norm,
                "inner_iters": inner_it,
                "mu": mu,
                "time": time.perf_counter() - t_start,
            }
        )
        w = w_new
        if np.any(gamma_p > cap) or np.any(_split(w, p)[1] > cap):
            termination = TERM_GAMMA_MAX
            break
        if not progress:
            termination = TERM_CONVERGED
            break
    return _report(
        problem,
        w,
        np.concatenate([beta_p, gamma_p]),
        termination,
        trace,
        t_start,
        "msr3",
    )


def msr3_fast(
    problem: LMEProblem,
    reg: rg.Regularizer,
    cfg: SolverConfig,
    warm: Optional[SolveReport] = None,
) -> SolveReport:
    """Hybrid solver with the prox update interleaved at every iterate that
    lies in the central-path neighborhood."""
    t_start = time.perf_counter()
    p, q = problem.p, problem.q
    cap = cfg.gamma_cap(problem)
    a = cfg.effective_prox_step()
    w, state = _warm_init(problem, warm)
    mu = max(float(state.v @ state.gamma) / (10.0 * q), MU_FLOOR)
    trace = []
    termination = TERM_MAX_ITER
    # a single tiny step can be an artifact of heavy fraction-to-boundary
    # damping, so stalling only counts after several consecutive ones
    stall_count = 0
    obj = lk.neg_loglik(problem, ParamPoint(*_split(w, p))) + rg.penalty(reg, w)
    for it in range(cfg.max_iter_outer):
        cache = lk.PointCache(problem, state.point())
        g_norm = _kkt_norm(problem, state, w, cfg.eta, mu, cache=cache)
        if g_norm <= cfg.tol:
            termination = TERM_CONVERGED
            break
        new_state = _newton_sweep_state(
            problem, state, w, cfg.eta, mu, cfg.use_psd_approx, cache=cache
        )
        w_new = w
        if inner_mod.central_path_ok(new_state.gamma, new_state.v):
            w_new = _prox_sparse(
                reg, np.concatenate([new_state.beta, new_state.gamma]), a, q
            )
            mu = max(float(new_state.v @ new_state.gamma) / (10.0 * q), MU_FLOOR)
        dw = float(np.linalg.norm(w_new - w))
        progress = (
            float(np.linalg.norm(new_state.beta - state.beta)) >= cfg.tol
            or float(np.linalg.norm(new_state.gamma - state.gamma)) >= cfg.tol
            or dw >= cfg.tol
        )
        stall_count = 0 if progress else stall_count + 1
        if dw > 0.0:
            obj = lk.neg_loglik(problem, ParamPoint(*_split(w_new, p))) + rg.penalty(
                reg, w_new
            )
        trace.append(
            {
                "iter": it,
                "objective": obj,
                "residual": dw,
                "kkt_residual": g_norm,
                "mu": mu,
                "time": time.perf_counter() - t_start,
            }
        )
        state, w = new_state, w_new
        if np.any(state.gamma > cap) or np.any(_split(w, p)[1] > cap):
            termination = TERM_GAMMA_MAX
            break
        if stall_count >= 5:
            termination = TERM_CONVERGED
            break
    return _report(
        problem,
        w,
        np.concatenate([state.beta, state.gamma]),
        termination,
        trace,
        t_start,
        "msr3_fast",
    )


def bic(problem: LMEProblem, beta_tilde: np.ndarray, gamma_tilde: np.ndarray) -> float:
    """Bayesian information criterion 2*L + k*ln(n) at the sparse point,
    where k counts the selected coordinates of both vectors."""
    point = ParamPoint(beta=beta_tilde, gamma=np.clip(gamma_tilde, 0.0, None))
    k = int(np.count_nonzero(beta_tilde)) + int(np.count_nonzero(gamma_tilde))
    return 2.0 * lk.neg_loglik(problem, point) + k * np.log(problem.n)


def select_eta(
    problem: LMEProblem,
    reg: rg.Regularizer,
    eta_grid: Sequence[float],
    cfg: SolverConfig,
    solver: Callable = None,
):
    """Pick the coupling weight by BIC over a grid, ties toward smaller eta."""
    eta_grid = sorted(float(e) for e in eta_grid)
    if not eta_grid:
        raise DomainError("eta grid must be nonempty")
    solver = solver or msr3_fast
    scores = []
    failures = []
    best_eta, best_bic = None, np.inf
    for eta in eta_grid:
        try:
            report = solver(problem, reg, replace(cfg, eta=eta))
            score = bic(problem, report.beta_tilde, report.gamma_tilde)
        except (ConvergenceError, SolverError) as exc:
            failures.append((eta, str(exc)))
            scores.append({"eta": eta, "bic": np.inf, "error": str(exc)})
            continue
        scores.append(
            {
                "eta": eta,
                "bic": score,
                "k": int(np.count_nonzero(report.beta_tilde))
                + int(np.count_nonzero(report.gamma_tilde)),
                "termination": report.termination,
            }
        )
        if score < best_bic:
            best_eta, best_bic = eta, score
    if best_eta is None:
        raise SolverError(
            "every eta grid point failed: "
            + "; ".join(f"eta={e}: {msg}" for e, msg in failures)
        )
    return best_eta, scores


def grid_oracle_tiny(
    problem: LMEProblem,
    reg: rg.Regularizer,
    beta_range=(-5.0, 5.0),
    gamma_range=(0.0, 5.0),
    coarse: float = 0.02,
    fine: float = 2e-4,
) -> np.ndarray:
    """Two-stage grid minimization of likelihood + penalty on a p=q=1
    instance; the brute-force reference for the consistency probe."""
    if problem.p != 1 or problem.q != 1:
        raise DomainError("the grid oracle only handles p = q = 1")

    def total(b, g):
        return lk.neg_loglik(problem, ParamPoint(np.array([b]), np.array([g]))) + rg.penalty(
            reg, np.array([b, g])
        )

    def sweep(b_lo, b_hi, g_lo, g_hi, step):
        betas = np.arange(b_lo, b_hi + step / 2, step)
        gammas = np.arange(max(g_lo, 0.0), g_hi + step / 2, step)
        best, best_val = None, np.inf
        for b in betas:
            for g in gammas:
                val = total(b, g)
                if val < best_val:
                    best, best_val = (b, g), val
        return best

    b0, g0 = sweep(*beta_range, *gamma_range, coarse)
    pad = 2 * coarse
    b1, g1 = sweep(b0 - pad, b0 + pad, g0 - pad, g0 + pad, fine)
    return np.array([b1, g1])


def consistency_probe(
    problem: LMEProblem,
    reg: rg.Regularizer,
    eta_sequence: Sequence[float],
    mu_sequence: Sequence[float],
    cfg: SolverConfig = None,
) -> dict:
    """Distance tables along increasing eta (coupling gap should shrink)
    and decreasing mu (solutions should approach the unrelaxed one).

    The eta path runs at the first barrier weight in ``mu_sequence``; the
    mu path runs at the largest eta in ``eta_sequence``.
    """
    cfg = cfg or SolverConfig()
    eta_sequence = [float(e) for e in eta_sequence]
    mu_sequence = [float(m) for m in mu_sequence]
    eta_rows = []
    mu_fixed = mu_sequence[0]
    for eta in eta_sequence:
        run_cfg = replace(cfg, eta=eta, mu=mu_fixed, step=None, t0=None, prox_step=None)
        report = pgd_value(problem, reg, run_cfg)
        w = np.concatenate([report.beta_tilde, report.gamma_tilde])
        x_hat = np.concatenate([report.beta_hat, report.gamma_hat])
        eta_rows.append({"eta": eta, "mu": mu_fixed, "gap": float(np.linalg.norm(x_hat - w))})

    oracle = grid_oracle_tiny(problem, reg) if problem.p == 1 and problem.q == 1 else None
    mu_rows = []
    eta_big = max(eta_sequence)
    for mu in mu_sequence:
        run_cfg = replace(cfg, eta=eta_big, mu=mu, step=None, t0=None, prox_step=None)
        report = pgd_value(problem, reg, run_cfg)
        w = np.concatenate([report.beta_tilde, report.gamma_tilde])
        row = {"mu": mu, "eta": eta_big, "w": w.tolist()}
        if oracle is not None:
            row["distance_to_unrelaxed"] = float(np.linalg.norm(w - oracle))
        mu_rows.append(row)
    return {"eta_path": eta_rows, "mu_path": mu_rows, "oracle": None if oracle is None else oracle.tolist()}
