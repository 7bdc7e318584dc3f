"""Self-checks of the analytic machinery against independent references.

The quick suite cross-checks gradients and Hessians against central finite
differences, prox operators against brute-force grid scans, the positive
semidefinite Hessian surrogate against an eigenvalue computation, and the
spectral likelihood lower bound.  The full suite adds the convexity
threshold boundary check and a relaxation consistency probe on a tiny
instance with a grid-search oracle.
"""

from __future__ import annotations

import numpy as np

from . import likelihood as lk
from . import regularizers as rg
from .algorithms import SolverConfig, consistency_probe
from .inner import eval_value_function
from .problem import GroupBlock, LMEProblem, ParamPoint, RelaxConfig

FD_STEP = 1e-6
GRAD_TOL = 1e-5
HESS_TOL = 1e-4
PROX_TOL = 1e-8


def random_problem(rng: np.random.Generator, m=3, sizes=(4, 6, 5), p=2, q=2) -> LMEProblem:
    """Small well-scaled instance: unit-scale responses against a noise
    covariance whose spectrum stays near or below one."""
    groups = []
    for n_i in sizes[:m]:
        X = rng.standard_normal((n_i, p))
        Z = 0.6 * rng.standard_normal((n_i, q))
        Y = rng.standard_normal(n_i)
        A = 0.05 * rng.standard_normal((n_i, n_i))
        Lam = A @ A.T + 0.2 * np.eye(n_i)
        groups.append(GroupBlock(X=X, Z=Z, Y=Y, Lam=Lam))
    return LMEProblem(tuple(groups))


def random_point(rng: np.random.Generator, p: int, q: int) -> ParamPoint:
    return ParamPoint(beta=0.5 * rng.standard_normal(p), gamma=rng.uniform(0.05, 0.6, q))


def _fd_gradient(problem: LMEProblem, point: ParamPoint, h: float = FD_STEP) -> np.ndarray:
    w0 = point.stacked()
    p = problem.p
    out = np.zeros_like(w0)
    for j in range(w0.size):
        e = np.zeros_like(w0)
        e[j] = h
        up = ParamPoint(beta=(w0 + e)[:p], gamma=(w0 + e)[p:])
        dn = ParamPoint(beta=(w0 - e)[:p], gamma=(w0 - e)[p:])
        out[j] = (lk.neg_loglik(problem, up) - lk.neg_loglik(problem, dn)) / (2 * h)
    return out


def check_gradient(seed: int = 0, trials: int = 10) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        problem = random_problem(rng)
        point = random_point(rng, problem.p, problem.q)
        gb, gg = lk.grad(problem, point)
        analytic = np.concatenate([gb, gg])
        numeric = _fd_gradient(problem, point)
        rel = np.linalg.norm(analytic - numeric) / max(1.0, np.linalg.norm(numeric))
        worst = max(worst, rel)
    return {"name": "gradient_fd", "passed": worst < GRAD_TOL, "worst_rel_err": worst}


def check_hessian(seed: int = 1, trials: int = 5) -> dict:
    rng = np.random.default_rng(seed)
    p_dim = None
    worst = 0.0
    for _ in range(trials):
        problem = random_problem(rng)
        point = random_point(rng, problem.p, problem.q)
        H = lk.hess(problem, point)
        w0 = point.stacked()
        p_dim = problem.p
        n = w0.size
        numeric = np.zeros((n, n))
        h = 1e-5
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            up = ParamPoint(beta=(w0 + e)[:p_dim], gamma=(w0 + e)[p_dim:])
            dn = ParamPoint(beta=(w0 - e)[:p_dim], gamma=(w0 - e)[p_dim:])
            gu = np.concatenate(lk.grad(problem, up))
            gd = np.concatenate(lk.grad(problem, dn))
            numeric[:, j] = (gu - gd) / (2 * h)
        numeric = 0.5 * (numeric + numeric.T)
        rel = np.linalg.norm(H - numeric) / max(1.0, np.linalg.norm(numeric))
        worst = max(worst, rel)
    return {"name": "hessian_fd", "passed": worst < HESS_TOL, "worst_rel_err": worst}


def check_psd_surrogate(seed: int = 2, trials: int = 10) -> dict:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(trials):
        problem = random_problem(rng)
        point = random_point(rng, problem.p, problem.q)
        eigs = np.linalg.eigvalsh(lk.hess_psd_approx(problem, point))
        worst = min(worst, float(eigs.min()))
    return {"name": "psd_surrogate", "passed": worst > -1e-8, "min_eigenvalue": worst}


def check_prox(seed: int = 3, trials: int = 30) -> dict:
    """Prox outputs must attain the grid-scan minimum of
    (1/2t)(u - x)^2 + penalty(u) on a fine grid around x."""
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    for _ in range(trials):
        kind = rng.choice(rg.KINDS)
        lam = float(rng.uniform(0.05, 2.0))
        t = float(rng.uniform(0.05, 3.0))
        x = float(rng.uniform(-6, 6))
        reg = rg.Regularizer(kind=str(kind), lam=lam)
        out = rg.prox(reg, rg.ProxRequest(point=np.array([x]), step=t))[0]

        def objective(u):
            return (u - x) ** 2 / (2 * t) + rg.penalty(reg, np.array([u]))

        span = abs(x) + 2.0
        grid = np.linspace(-span, span, 40001)
        grid = np.concatenate([grid, [0.0, x]])
        grid_min = min(objective(u) for u in grid)
        gap = objective(out) - grid_min
        worst_gap = max(worst_gap, gap)
    return {"name": "prox_grid", "passed": worst_gap < PROX_TOL, "worst_gap": worst_gap}


def check_lower_bound(seed: int = 4, trials: int = 10) -> dict:
    """Per-group spectral lower bound on the likelihood terms:
    (1/2)(r' Om^-1 r + ln det Om) >= max(ln(||r||^2 / n), ln ||Om||)
                                      + ((n - 1) / 2) ln(min eig Om)."""
    rng = np.random.default_rng(seed)
    worst_margin = np.inf
    for _ in range(trials):
        problem = random_problem(rng)
        point = random_point(rng, problem.p, problem.q)
        cache = lk.PointCache(problem, point)
        for i, g in enumerate(problem.groups):
            om = lk.omega(problem, i, point.gamma)
            eigs = np.linalg.eigvalsh(om)
            r = cache.resid[i]
            n_i = r.size
            lhs = 0.5 * (float(r @ cache.oinv_r[i]) + cache.logdet[i])
            r2 = float(r @ r)
            if r2 <= 0:
                continue
            rhs = max(np.log(r2 / n_i), np.log(eigs[-1])) + 0.5 * (n_i - 1) * np.log(eigs[0])
            worst_margin = min(worst_margin, lhs - rhs)
    return {"name": "spectral_lower_bound", "passed": worst_margin > -1e-9, "worst_margin": worst_margin}


def check_value_gradient(seed: int = 5) -> dict:
    """Finite-difference check of the value-function gradient identity
    grad u = eta * (outer point - inner minimizer)."""
    rng = np.random.default_rng(seed)
    problem = random_problem(rng, m=2, sizes=(4, 5))
    outer = random_point(rng, problem.p, problem.q)
    eta, mu = 5.0, 1e-2
    ev = eval_value_function(problem, outer, RelaxConfig(eta=eta, mu=mu))
    h = 1e-6
    w0 = outer.stacked()
    numeric = np.zeros_like(w0)
    for j in range(w0.size):
        e = np.zeros_like(w0)
        e[j] = h
        up = ParamPoint(beta=(w0 + e)[: problem.p], gamma=(w0 + e)[problem.p :])
        dn = ParamPoint(beta=(w0 - e)[: problem.p], gamma=(w0 - e)[problem.p :])
        vu = eval_value_function(problem, up, RelaxConfig(eta=eta, mu=mu)).value
        vd = eval_value_function(problem, dn, RelaxConfig(eta=eta, mu=mu)).value
        numeric[j] = (vu - vd) / (2 * h)
    rel = np.linalg.norm(ev.gradient - numeric) / max(1.0, np.linalg.norm(numeric))
    return {"name": "value_gradient_fd", "passed": rel < 1e-4, "rel_err": rel}


def _tight_instance(m: int = 8) -> LMEProblem:
    """Copies of a scalar group with unit design and zero residual; the
    convexity threshold bound is attained here as gamma shrinks."""
    one = np.ones((1, 1))
    g = GroupBlock(X=one, Z=one, Y=np.ones(1), Lam=one)
    return LMEProblem(tuple(g for _ in range(m)))


def check_convexity_threshold() -> dict:
    """Min eigenvalue of H + eta I over small gamma must be nonnegative just
    above the threshold and go negative well below it."""
    problem = _tight_instance()
    threshold = problem.eta_bar()
    point = ParamPoint(beta=np.ones(1), gamma=np.array([1e-8]))
    H = lk.hess(problem, point)
    eye = np.eye(H.shape[0])
    above = float(np.linalg.eigvalsh(H + 1.05 * threshold * eye).min())
    below = float(np.linalg.eigvalsh(H + 0.5 * threshold * eye).min())
    passed = above > -1e-6 * threshold and below < 0
    return {
        "name": "convexity_threshold",
        "passed": passed,
        "eta_bar": threshold,
        "min_eig_above": above,
        "min_eig_below": below,
    }


def check_consistency_probe() -> dict:
    """On a p = q = 1 instance the coupling gap must shrink along an
    increasing eta path and the barrier path must end near the grid oracle."""
    rng = np.random.default_rng(7)
    X = rng.standard_normal((12, 1))
    Y = 1.5 * X[:, 0] + rng.standard_normal(12) * 0.4
    g = GroupBlock(X=X, Z=X, Y=Y, Lam=0.16 * np.eye(12))
    problem = LMEProblem((g,))
    reg = rg.Regularizer(kind="l1", lam=0.3)
    probe = consistency_probe(
        problem,
        reg,
        eta_sequence=[1.0, 10.0, 100.0, 1000.0],
        mu_sequence=[1e-2, 1e-4, 1e-6],
        cfg=SolverConfig(tol=1e-8, max_iter_outer=5000),
    )
    gaps = [row["gap"] for row in probe["eta_path"]]
    dist = [row["distance_to_unrelaxed"] for row in probe["mu_path"]]
    passed = gaps[-1] < gaps[0] and gaps[-1] < 1e-2 and dist[-1] < 5e-3
    return {
        "name": "consistency_probe",
        "passed": passed,
        "coupling_gaps": gaps,
        "oracle_distances": dist,
    }


QUICK_CHECKS = (
    check_gradient,
    check_hessian,
    check_psd_surrogate,
    check_prox,
    check_lower_bound,
    check_value_gradient,
)
FULL_CHECKS = QUICK_CHECKS + (check_convexity_threshold, check_consistency_probe)


def run_suite(full: bool = False) -> dict:
    checks = FULL_CHECKS if full else QUICK_CHECKS
    results = [fn() for fn in checks]
    return {
        "mode": "full" if full else "quick",
        "passed": all(r["passed"] for r in results),
        "checks": results,
    }
