"""Synthetic grouped-data generator with known ground-truth sparsity.

Randomness is drawn from numpy's Philox-backed default generator via a
documented stream-splitting rule: the root SeedSequence(seed) is spawned
into one child per group, and within each group the draws happen in the
fixed order X, Z (when independent of X), u, eps.  Regeneration with the
same seed therefore reproduces the problem bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import DomainError, ProblemFormatError
from .problem import GroupBlock, LMEProblem

DEFAULT_GROUP_SIZES = (10, 15, 4, 8, 3, 5, 18, 9, 6)
DEFAULT_NOISE_STD = 0.3


@dataclass(frozen=True)
class SimConfig:
    p: int
    q: int
    beta_true: np.ndarray
    gamma_true: np.ndarray
    group_sizes: tuple
    noise_std: float = DEFAULT_NOISE_STD
    z_equals_x: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta_true", np.asarray(self.beta_true, dtype=float))
        object.__setattr__(self, "gamma_true", np.asarray(self.gamma_true, dtype=float))
        object.__setattr__(self, "group_sizes", tuple(int(s) for s in self.group_sizes))
        if self.beta_true.shape != (self.p,) or self.gamma_true.shape != (self.q,):
            raise DomainError("beta_true/gamma_true lengths must match p/q")
        if np.any(self.gamma_true < 0):
            raise DomainError("gamma_true must be nonnegative")
        if any(s < 1 for s in self.group_sizes):
            raise DomainError("every group needs at least one observation")
        if self.z_equals_x and self.p != self.q:
            raise DomainError("z_equals_x requires p == q")


@dataclass(frozen=True)
class GroundTruth:
    beta_mask: np.ndarray
    gamma_mask: np.ndarray

    def to_dict(self) -> dict:
        return {
            "beta_mask": [bool(b) for b in self.beta_mask],
            "gamma_mask": [bool(b) for b in self.gamma_mask],
        }

    @staticmethod
    def from_dict(payload: dict) -> "GroundTruth":
        return GroundTruth(
            beta_mask=np.asarray(payload["beta_mask"], dtype=bool),
            gamma_mask=np.asarray(payload["gamma_mask"], dtype=bool),
        )


def default_config(seed: int = 0) -> SimConfig:
    """The benchmark setup: 20 covariates, the first 10 increasingly
    important in both the mean and the variance, 9 groups of mixed sizes."""
    coeffs = np.concatenate([np.arange(1, 11) / 2.0, np.zeros(10)])
    return SimConfig(
        p=20,
        q=20,
        beta_true=coeffs,
        gamma_true=coeffs.copy(),
        group_sizes=DEFAULT_GROUP_SIZES,
        noise_std=DEFAULT_NOISE_STD,
        z_equals_x=True,
        seed=seed,
    )


def generate(config: SimConfig):
    """Draw one problem and its ground-truth masks."""
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(len(config.group_sizes))
    groups = []
    for n_i, child in zip(config.group_sizes, children):
        rng = np.random.default_rng(child)
        X = rng.standard_normal((n_i, config.p))
        Z = X if config.z_equals_x else rng.standard_normal((n_i, config.q))
        u = rng.standard_normal(config.q) * np.sqrt(config.gamma_true)
        eps = rng.standard_normal(n_i) * config.noise_std
        Y = X @ config.beta_true + Z @ u + eps
        Lam = max(config.noise_std, 1e-8) ** 2 * np.eye(n_i)
        groups.append(GroupBlock(X=X, Z=Z, Y=Y, Lam=Lam))
    truth = GroundTruth(
        beta_mask=config.beta_true != 0, gamma_mask=config.gamma_true != 0
    )
    return LMEProblem(groups), truth


def accuracy(beta_mask, gamma_mask, truth: GroundTruth) -> float:
    """Fraction of coordinates, across both vectors jointly, whose
    selected/unselected status matches the truth."""
    beta_mask = np.asarray(beta_mask, dtype=bool)
    gamma_mask = np.asarray(gamma_mask, dtype=bool)
    if beta_mask.shape != truth.beta_mask.shape or gamma_mask.shape != truth.gamma_mask.shape:
        raise ProblemFormatError("mask lengths do not match the ground truth")
    hits = np.sum(beta_mask == truth.beta_mask) + np.sum(gamma_mask == truth.gamma_mask)
    return float(hits) / (beta_mask.size + gamma_mask.size)


def f1_score(est_mask, true_mask) -> float:
    """F1 of selected coordinates against the truth for one vector."""
    est = np.asarray(est_mask, dtype=bool)
    true = np.asarray(true_mask, dtype=bool)
    tp = int(np.sum(est & true))
    denom = 2 * tp + int(np.sum(est & ~true)) + int(np.sum(~est & true))
    return 1.0 if denom == 0 else 2 * tp / denom


def save_truth(truth: GroundTruth, path) -> None:
    with open(path, "w") as fh:
        json.dump(truth.to_dict(), fh)


def load_truth(path) -> GroundTruth:
    with open(path) as fh:
        return GroundTruth.from_dict(json.load(fh))
