"""Lorentz-model hyperbolic geometry.

Points live on the hyperboloid sheet {x : <x,x>_L = 1/K, x_t > 0} inside
(n+1)-dimensional Minkowski space with signature (-, +, ..., +) and
constant negative curvature K.  Everything here is exact float64 numpy;
the differentiable layer counterparts live in :mod:`hyperlm.layers`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

MANIFOLD_TOL = 1e-9

# rounding can push 2/K - 2<x,x> slightly negative; squash this band to 0
_SQDIST_CLAMP = -1e-12


class DegenerateCentroidError(ValueError):
    """Weighted combination with zero Lorentzian norm cannot be normalized."""


@dataclass(frozen=True)
class Curvature:
    """Constant negative curvature of a hyperboloid sheet."""

    K: float

    def __post_init__(self):
        if not math.isfinite(self.K) or self.K >= 0:
            raise ValueError(f"curvature must be finite and negative, got {self.K}")

    @property
    def radius_sq(self) -> float:
        """1/K, the value of <x,x>_L on the sheet."""
        return 1.0 / self.K


def _as_curv(K) -> Curvature:
    return K if isinstance(K, Curvature) else Curvature(float(K))


@dataclass(frozen=True)
class LorentzPoint:
    """A single point [time, space...] on the sheet of its curvature."""

    time: float
    space: np.ndarray
    curvature: Curvature

    def __post_init__(self):
        object.__setattr__(self, "space", np.asarray(self.space, dtype=np.float64))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate(([self.time], self.space))

    @property
    def dim(self) -> int:
        return self.space.shape[0]


@dataclass(frozen=True)
class LorentzBatch:
    """T stacked points, rows = [time, space...], shared curvature."""

    points: np.ndarray
    curvature: Curvature

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError("LorentzBatch expects a T x (n+1) array")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def row(self, i: int) -> LorentzPoint:
        return LorentzPoint(float(self.points[i, 0]), self.points[i, 1:].copy(),
                            self.curvature)

    @property
    def space(self) -> np.ndarray:
        return self.points[:, 1:]

    @property
    def time(self) -> np.ndarray:
        return self.points[:, 0]


def _vec(x) -> np.ndarray:
    if isinstance(x, LorentzPoint):
        return x.vector
    return np.asarray(x, dtype=np.float64)


def origin(K, n: int) -> LorentzPoint:
    """The sheet's apex [sqrt(-1/K), 0, ..., 0]."""
    K = _as_curv(K)
    return LorentzPoint(math.sqrt(-K.radius_sq), np.zeros(n), K)


def lorentz_inner(x, y) -> float:
    """-x_t y_t + x_s . y_s (curvature-agnostic)."""
    xv, yv = _vec(x), _vec(y)
    if xv.shape != yv.shape:
        raise ValueError(f"dimension mismatch: {xv.shape} vs {yv.shape}")
    return float(-xv[0] * yv[0] + xv[1:] @ yv[1:])


def lorentz_norm(x) -> float:
    """sqrt(|<x,x>_L|) for any ambient vector."""
    xv = _vec(x)
    return math.sqrt(abs(-xv[0] * xv[0] + xv[1:] @ xv[1:]))


def lift(space, K) -> LorentzPoint:
    """Complete a space-like vector to a sheet point via its time coordinate."""
    K = _as_curv(K)
    space = np.asarray(space, dtype=np.float64)
    time = math.sqrt(float(space @ space) - K.radius_sq)
    return LorentzPoint(time, space, K)


def sq_distance(x: LorentzPoint, y: LorentzPoint) -> float:
    """Squared Lorentzian distance 2/K - 2<x,y>_L (non-negative)."""
    if x.curvature != y.curvature:
        raise ValueError("sq_distance requires matching curvatures")
    d2 = 2.0 * x.curvature.radius_sq - 2.0 * lorentz_inner(x, y)
    if _SQDIST_CLAMP <= d2 < 0.0:
        return 0.0
    return d2


def rescale_curvature(x: LorentzPoint, K2) -> LorentzPoint:
    """Carry a point from its sheet to curvature K2 via sqrt(K1/K2) scaling."""
    K2 = _as_curv(K2)
    factor = math.sqrt(x.curvature.K / K2.K)
    return LorentzPoint(x.time * factor, x.space * factor, K2)


def lorentz_centroid(vs, ws=None, K=None) -> LorentzPoint:
    """Normalized weighted sum: (sum w_i v_i) / (sqrt(-K) |‖sum w_i v_i‖_L|)."""
    vs = list(vs)
    if not vs:
        raise ValueError("centroid of empty collection")
    if K is None:
        first = vs[0]
        if not isinstance(first, LorentzPoint):
            raise ValueError("curvature required for raw-vector centroid")
        K = first.curvature
    K = _as_curv(K)
    if ws is None:
        ws = np.ones(len(vs))
    ws = np.asarray(ws, dtype=np.float64)
    total = np.zeros_like(_vec(vs[0]))
    for w, v in zip(ws, vs):
        total = total + w * _vec(v)
    norm = lorentz_norm(total)
    if norm == 0.0:
        raise DegenerateCentroidError("weighted sum has zero Lorentzian norm")
    scaled = total / (math.sqrt(-K.K) * norm)
    return LorentzPoint(float(scaled[0]), scaled[1:], K)


def check_on_manifold(x, tol: float = MANIFOLD_TOL, K=None) -> bool:
    """True iff <x,x>_L matches 1/K within tol (relative to |1/K|) and x_t > 0."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(x, LorentzPoint):
        K = x.curvature
    K = _as_curv(K)
    xv = _vec(x)
    inner = -xv[0] * xv[0] + xv[1:] @ xv[1:]
    bound = tol * max(1.0, abs(K.radius_sq))
    return bool(abs(inner - K.radius_sq) <= bound and xv[0] > 0)


def manifold_violation(points: np.ndarray, K) -> float:
    """Worst relative constraint violation over rows of a T x (n+1) array."""
    K = _as_curv(K)
    pts = np.asarray(points, dtype=np.float64)
    inner = -pts[:, 0] ** 2 + np.sum(pts[:, 1:] ** 2, axis=1)
    scale = max(1.0, abs(K.radius_sq))
    worst = float(np.max(np.abs(inner - K.radius_sq))) / scale
    if np.any(pts[:, 0] <= 0):
        return float("inf")
    return worst


def debug_checks_enabled() -> bool:
    return os.environ.get("HELM_DEBUG_MANIFOLD", "") == "1"


def debug_assert_on_manifold(points: np.ndarray, K, where: str,
                             tol: float = 1e-7) -> None:
    """Raise if HELM_DEBUG_MANIFOLD=1 and any row leaves the sheet."""
    if not debug_checks_enabled():
        return
    v = manifold_violation(points, K)
    if v > tol:
        raise AssertionError(f"manifold violation {v:.3e} > {tol:.0e} at {where}")
