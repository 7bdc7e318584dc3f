"""Grouped mixed-effects data model and its JSON serialization.

A problem is a list of per-group blocks (X_i, Z_i, Y_i, Lambda_i) with
known, symmetric positive definite noise covariances Lambda_i.  Instances
are validated and frozen at construction and are safe to share across
concurrent solver runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DomainError, ProblemFormatError

# gamma entries below this are treated as exactly zero at the boundary
GAMMA_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class GroupBlock:
    """One group's design matrices, outcomes, and noise covariance."""

    X: np.ndarray  # n_i x p
    Z: np.ndarray  # n_i x q
    Y: np.ndarray  # n_i
    Lam: np.ndarray  # n_i x n_i, SPD

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class ParamPoint:
    """The optimization variable of the original problem: fixed effects and
    random-effect variances."""

    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        if np.any(self.gamma < -GAMMA_ZERO_TOL):
            raise DomainError("gamma must be elementwise nonnegative")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.beta, self.gamma])


@dataclass(frozen=True)
class RelaxConfig:
    """Relaxation weights: quadratic coupling strength and log-barrier weight.

    ``eta_bar`` is the strong-convexity threshold of the problem the config
    is used with; partial minimization of the relaxed objective is only
    guaranteed well posed for eta > eta_bar when the exact Hessian is used.
    """

    eta: float
    mu: float
    eta_bar: float = 0.0

    def __post_init__(self):
        if self.eta < 0:
            raise DomainError("eta must be nonnegative")
        if self.mu < 0:
            raise DomainError("mu must be nonnegative")


@dataclass(frozen=True)
class LMEProblem:
    """Immutable grouped dataset consumed by every evaluation and solver."""

    groups: tuple
    p: int = field(init=False)
    q: int = field(init=False)
    m: int = field(init=False)
    n: int = field(init=False)
    # spectral quantities computed once at load
    lam_min_eigs: tuple = field(init=False)
    z_max_sigmas: tuple = field(init=False)

    def __init__(self, groups: Sequence[GroupBlock]):
        groups = tuple(groups)
        if len(groups) == 0:
            raise ProblemFormatError("a problem needs at least one group")
        p = groups[0].X.shape[1]
        q = groups[0].Z.shape[1]
        lam_min_eigs = []
        z_max_sigmas = []
        for k, g in enumerate(groups):
            n_i = g.X.shape[0]
            if n_i < 1:
                raise ProblemFormatError(f"group {k}: empty group")
            if g.Z.shape[0] != n_i or g.Y.shape != (n_i,) or g.Lam.shape != (n_i, n_i):
                raise ProblemFormatError(f"group {k}: inconsistent row counts")
            if g.X.shape[1] != p or g.Z.shape[1] != q:
                raise ProblemFormatError(f"group {k}: inconsistent column counts")
            if not np.allclose(g.Lam, g.Lam.T):
                raise ProblemFormatError(f"group {k}: Lambda is not symmetric")
            lam_eigs = np.linalg.eigvalsh(g.Lam)
            if lam_eigs[0] <= 0:
                raise ProblemFormatError(
                    f"group {k}: Lambda is not positive definite "
                    f"(min eigenvalue {lam_eigs[0]:.3e})"
                )
            lam_min_eigs.append(lam_eigs[0])
            z_max_sigmas.append(
                float(np.linalg.svd(g.Z, compute_uv=False)[0]) if q > 0 else 0.0
            )
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "m", len(groups))
        object.__setattr__(self, "n", sum(g.n for g in groups))
        object.__setattr__(self, "lam_min_eigs", tuple(lam_min_eigs))
        object.__setattr__(self, "z_max_sigmas", tuple(z_max_sigmas))

    def eta_bar(self) -> float:
        """Strong-convexity threshold: coupling weights above this value make
        the partially-minimized relaxed objective strongly convex."""
        nu = max(
            0.5 * lam ** (-2) * sig ** 4
            for lam, sig in zip(self.lam_min_eigs, self.z_max_sigmas)
        )
        return self.m * nu

    def y_sample_variance_max(self) -> float:
        """Largest per-group sample variance of the outcomes (ddof=0)."""
        return max(float(np.var(g.Y)) for g in self.groups)


def _normalize_lambda(raw, n_i: int) -> np.ndarray:
    """Accept a scalar (s*I), a vector (diagonal), or a full matrix."""
    if np.isscalar(raw):
        return float(raw) * np.eye(n_i)
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(n_i)
    if arr.ndim == 1:
        if arr.shape[0] != n_i:
            raise ProblemFormatError("diagonal Lambda has the wrong length")
        return np.diag(arr)
    if arr.ndim == 2:
        if arr.shape != (n_i, n_i):
            raise ProblemFormatError("full Lambda has the wrong shape")
        return arr
    raise ProblemFormatError("Lambda must be a scalar, vector, or matrix")


def problem_from_dict(payload: dict) -> LMEProblem:
    if not isinstance(payload, dict) or "groups" not in payload:
        raise ProblemFormatError("problem JSON must be an object with a 'groups' list")
    groups = []
    for k, g in enumerate(payload["groups"]):
        try:
            X = np.asarray(g["X"], dtype=float)
            Z = np.asarray(g["Z"], dtype=float)
            Y = np.asarray(g["Y"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProblemFormatError(f"group {k}: {exc}") from exc
        if X.ndim != 2 or Z.ndim != 2 or Y.ndim != 1:
            raise ProblemFormatError(f"group {k}: X and Z must be 2-d, Y 1-d")
        Lam = _normalize_lambda(g.get("Lambda", 1.0), X.shape[0])
        groups.append(GroupBlock(X=X, Z=Z, Y=Y, Lam=Lam))
    return LMEProblem(groups)


def problem_to_dict(problem: LMEProblem) -> dict:
    return {
        "groups": [
            {
                "X": g.X.tolist(),
                "Z": g.Z.tolist(),
                "Y": g.Y.tolist(),
                "Lambda": g.Lam.tolist(),
            }
            for g in problem.groups
        ]
    }


def load_problem(path) -> LMEProblem:
    with open(path) as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProblemFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return problem_from_dict(payload)


def save_problem(problem: LMEProblem, path) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh)
