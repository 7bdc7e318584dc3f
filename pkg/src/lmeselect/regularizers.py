"""Selection penalties and their proximal operators.

Four coordinate-separable regularizers: L0, L1, adaptive lasso, and SCAD.
Each supplies a penalty value and the exact scalar prox in closed form,
plus the nonnegativity-constrained variant used for the variance
coordinates.  For the nonconvex penalties the constrained prox is an
explicit candidate comparison, not a post-hoc clip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DomainError

KINDS = ("l0", "l1", "alasso", "scad")
SCAD_DEFAULT_A = 3.7


@dataclass(frozen=True)
class Regularizer:
    """Tagged choice of penalty with its hyperparameters.

    ``fixed_mask`` marks coordinates exempt from penalization (an intercept,
    say); they pass through the prox unchanged apart from the nonnegativity
    projection on variance coordinates.
    """

    kind: str
    lam: float
    alasso_weights: Optional[np.ndarray] = None
    scad_a: float = SCAD_DEFAULT_A
    fixed_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown regularizer kind {self.kind!r}")
        if self.lam < 0:
            raise DomainError("lambda must be nonnegative")
        if self.kind == "scad" and self.scad_a <= 2:
            raise DomainError("SCAD shape parameter must exceed 2")
        if self.alasso_weights is not None:
            w = np.asarray(self.alasso_weights, dtype=float)
            if np.any(w <= 0):
                raise DomainError("adaptive lasso weights must be positive")
            object.__setattr__(self, "alasso_weights", w)
        if self.fixed_mask is not None:
            object.__setattr__(
                self, "fixed_mask", np.asarray(self.fixed_mask, dtype=bool)
            )

    @staticmethod
    def from_dict(payload: dict) -> "Regularizer":
        return Regularizer(
            kind=payload["kind"].lower(),
            lam=float(payload["lambda"]),
            scad_a=float(payload.get("a", SCAD_DEFAULT_A)),
            alasso_weights=(
                np.asarray(payload["weights"], dtype=float)
                if payload.get("weights") is not None
                else None
            ),
        )


@dataclass(frozen=True)
class ProxRequest:
    """One prox evaluation: the point, the step scale, and whether the last
    ``tail`` coordinates must additionally stay nonnegative."""

    point: np.ndarray
    step: float
    nonneg_tail: bool = False
    tail: int = 0

    def __post_init__(self):
        if self.step <= 0:
            raise DomainError("prox step must be positive")
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))


def _weights_for(reg: Regularizer, size: int) -> np.ndarray:
    """Effective per-coordinate penalty scale (lambda * a_j for the adaptive
    lasso, lambda otherwise), with exempt coordinates zeroed."""
    if reg.kind == "alasso":
        if reg.alasso_weights is None:
            w = reg.lam * np.ones(size)
        else:
            if reg.alasso_weights.shape[0] != size:
                raise DomainError("adaptive lasso weights length mismatch")
            w = reg.lam * reg.alasso_weights
    else:
        w = reg.lam * np.ones(size)
    if reg.fixed_mask is not None:
        if reg.fixed_mask.shape[0] != size:
            raise DomainError("fixed_mask length mismatch")
        w = np.where(reg.fixed_mask, 0.0, w)
    return w


def _scad_value(w: np.ndarray, lam: float, a: float) -> np.ndarray:
    aw = np.abs(w)
    linear = lam * aw
    quad = (2 * a * lam * aw - aw ** 2 - lam ** 2) / (2 * (a - 1))
    flat = np.full_like(aw, lam ** 2 * (a + 1) / 2)
    return np.where(aw <= lam, linear, np.where(aw <= a * lam, quad, flat))


def penalty(reg: Regularizer, w: np.ndarray) -> float:
    """Penalty value, summed over coordinates.  Exempt coordinates add 0."""
    w = np.asarray(w, dtype=float)
    lam_j = _weights_for(reg, w.shape[0])
    if reg.kind in ("l1", "alasso"):
        return float(np.sum(lam_j * np.abs(w)))
    if reg.kind == "l0":
        return float(np.sum(lam_j * (w != 0)))
    # SCAD: lam_j is uniform (no per-coordinate weights) but may carry zeros
    # from fixed_mask; evaluate coordinatewise with the masked scale.
    vals = np.where(lam_j > 0, _scad_value(w, reg.lam, reg.scad_a), 0.0)
    return float(np.sum(vals))


def _soft(x: np.ndarray, thr: np.ndarray) -> np.ndarray:
    out = np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)
    # keep thresholded coordinates as exact zeros
    out[np.abs(x) <= thr] = 0.0
    return out


def _hard(x: np.ndarray, t: float, lam_j: np.ndarray) -> np.ndarray:
    # keep x when (1/2)x^2 strictly exceeds the per-coordinate cost t*lam;
    # a tie resolves to zero (prefer sparsity)
    thr = np.sqrt(2.0 * t * lam_j)
    return np.where(np.abs(x) > thr, x, 0.0)


def _scad_prox_scalar(x: float, t: float, lam: float, a: float) -> float:
    """Exact scalar SCAD prox by candidate comparison.

    Stationary points of each of the three zones (clipped to that zone),
    together with zero, cover every possible minimizer of
    t*scad(w) + (w - x)^2 / 2 even when t >= a - 1 makes the middle zone
    nonconvex.
    """
    if lam == 0.0:
        return x
    s = 1.0 if x >= 0 else -1.0
    z = abs(x)
    cands = [0.0]
    cands.append(min(max(z - t * lam, 0.0), lam))  # inner (soft) zone
    denom = a - 1.0 - t
    if denom != 0.0:
        w2 = ((a - 1.0) * z - t * a * lam) / denom
        cands.append(min(max(w2, lam), a * lam))
    # zone boundaries cover the case t >= a - 1 where the middle zone
    # objective is concave and minimized at an endpoint
    cands.extend([lam, a * lam])
    cands.append(max(z, a * lam))  # outer (identity) zone
    best, best_val = 0.0, np.inf
    for w in cands:
        val = t * float(_scad_value(np.array([w]), lam, a)[0]) + 0.5 * (w - z) ** 2
        # strict improvement required so ties prefer the sparser candidate
        if val < best_val - 1e-15:
            best, best_val = w, val
    return s * best


def prox(reg: Regularizer, req: ProxRequest) -> np.ndarray:
    """Proximal operator argmin_w  step * penalty(w) + ||w - x||^2 / 2,
    with the trailing ``tail`` coordinates constrained to be nonnegative
    when requested."""
    x = req.point
    t = req.step
    lam_j = _weights_for(reg, x.shape[0])
    if reg.kind in ("l1", "alasso"):
        out = _soft(x, t * lam_j)
    elif reg.kind == "l0":
        out = _hard(x, t, lam_j)
    else:  # scad
        out = np.array(
            [
                xi if lj == 0.0 else _scad_prox_scalar(xi, t, reg.lam, reg.scad_a)
                for xi, lj in zip(x, lam_j)
            ]
        )
    if reg.fixed_mask is not None:
        out = np.where(reg.fixed_mask, x, out)
    if req.nonneg_tail and req.tail > 0:
        # For every kind here the constrained scalar prox equals the
        # unconstrained prox for x > 0 and zero for x <= 0: the prox
        # objective is nondecreasing on w >= 0 once x <= 0, and maps
        # positive inputs to nonnegative outputs otherwise.
        tail = slice(x.shape[0] - req.tail, x.shape[0])
        xt = x[tail]
        out_tail = np.where(xt > 0, out[tail], 0.0)
        if reg.fixed_mask is not None:
            out_tail = np.where(
                reg.fixed_mask[tail], np.maximum(xt, 0.0), out_tail
            )
        out = out.copy()
        out[tail] = out_tail
    # flush denormals and negative zeros produced by thresholding
    out = np.where(np.abs(out) < np.finfo(float).tiny, 0.0, out)
    return out


def select_mask(w: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Boolean mask of coordinates considered selected (|w_j| > tol)."""
    if tol < 0:
        raise DomainError("tolerance must be nonnegative")
    return np.abs(np.asarray(w, dtype=float)) > tol


def alasso_weights_from_reference(w_ref: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Adaptive lasso weights 1/max(|w_ref|, floor) from a preliminary
    unpenalized fit."""
    return 1.0 / np.maximum(np.abs(np.asarray(w_ref, dtype=float)), floor)
