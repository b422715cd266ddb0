"""Generating functions, their conjugates and Bregman distances.

Two objectives are supported: the elastic net ``lam*||x||_1 + ||x||^2/2``
and the quadratic ``||x||^2/2``. Both are 1-strongly convex, so the
conjugate gradient map is 1-Lipschitz. With ``lam = 0`` the elastic net
follows exactly the same code path as the quadratic.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Literal

import numpy as np

# Relative cutoff below which a singular value counts as zero.
RANK_RTOL = 1e-12
THETA_MAX_COLS = 12


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: Literal["elastic-net", "quadratic"] = "quadratic"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("elastic-net", "quadratic"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.kind == "quadratic" and self.lam != 0:
            raise ValueError("quadratic objective takes no lambda")

    @classmethod
    def elastic_net(cls, lam: float) -> "ObjectiveSpec":
        return cls("elastic-net", float(lam))

    @classmethod
    def quadratic(cls) -> "ObjectiveSpec":
        return cls("quadratic", 0.0)

    @property
    def mu(self) -> float:
        return 1.0

    @property
    def lipschitz_grad(self) -> float:
        return 1.0

    @property
    def is_quadratic(self) -> bool:
        return self.lam == 0.0


def soft_threshold(x, lam: float) -> np.ndarray:
    """Componentwise ``sign(x) * max(|x| - lam, 0)``."""
    if lam < 0:
        raise ValueError(f"threshold must be nonnegative, got {lam}")
    x = np.asarray(x, dtype=np.float64)
    if lam == 0:
        return x.copy()
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def conjugate_gradient_map(spec: ObjectiveSpec, dual) -> np.ndarray:
    """Primal point ``grad f*(dual)`` (identity or soft thresholding)."""
    return soft_threshold(dual, spec.lam)


def objective_value(spec: ObjectiveSpec, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    val = 0.5 * float(x @ x)
    if spec.lam:
        val += spec.lam * float(np.abs(x).sum())
    return val


def conjugate_value(spec: ObjectiveSpec, dual) -> float:
    """``f*(dual) = ||S_lam(dual)||^2 / 2``."""
    p = conjugate_gradient_map(spec, dual)
    return 0.5 * float(p @ p)


def bregman_distance(spec: ObjectiveSpec, dual, primal_of_dual, target) -> float:
    """Bregman distance ``f*(dual) - <dual, target> + f(target)``.

    ``primal_of_dual`` must equal ``conjugate_gradient_map(spec, dual)``;
    it is accepted so callers holding the pair avoid recomputing the map.
    For the quadratic objective this is ``||primal - target||^2 / 2``.
    """
    dual = np.asarray(dual, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    p = np.asarray(primal_of_dual, dtype=np.float64)
    val = 0.5 * float(p @ p) - float(dual @ target) + objective_value(spec, target)
    # cancellation can leave a tiny negative residue
    return max(val, 0.0)


def _sigma_min_nonzero(sub: np.ndarray) -> float:
    s = np.linalg.svd(sub, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return np.inf
    return float(s[s >= RANK_RTOL * s[0]][-1])


def restricted_sigma_min(matrix) -> float:
    """Minimum of the smallest nonzero singular value over all nonzero column submatrices."""
    A = getattr(matrix, "data", matrix)
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[1]
    if n > THETA_MAX_COLS:
        raise NotImplementedError(
            f"column-subset enumeration is limited to {THETA_MAX_COLS} columns, got {n}"
        )
    best = np.inf
    for k in range(1, n + 1):
        for J in combinations(range(n), k):
            best = min(best, _sigma_min_nonzero(A[:, J]))
    if not np.isfinite(best):
        raise ValueError("matrix is zero")
    return best


def theta_closed_form(matrix, x_hat, lam: float) -> float:
    """Inverse error-bound constant ``1/theta(x_hat)`` for the elastic net.

    Equals ``(|x|_min + 2 lam) / (|x|_min * sigma_tilde^2)`` where
    ``|x|_min`` is the smallest nonzero magnitude of ``x_hat`` and
    ``sigma_tilde`` is :func:`restricted_sigma_min`. Exponential in the
    column count, hence capped at 12 columns.
    """
    x_hat = np.asarray(x_hat, dtype=np.float64)
    mags = np.abs(x_hat[x_hat != 0])
    if mags.size == 0:
        raise ValueError("x_hat must have nonempty support")
    xmin = float(mags.min())
    sig = restricted_sigma_min(matrix)
    return (xmin + 2.0 * lam) / (xmin * sig**2)
