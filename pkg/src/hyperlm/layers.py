"""Differentiable hyperbolic layers over batched Lorentz points.

A batch is a Tensor of shape (T, n+1) whose rows are [time, space...]
points on the sheet of a fixed curvature.  Every layer keeps its output
on the sheet by construction: affine maps, normalizations, activations
and concatenations act on the space part and recompute the time
coordinate, and residual/centroid combinations renormalize by the
Lorentzian norm.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional

import numpy as np

from . import tensor as T
from .lorentz import Curvature, DegenerateCentroidError, debug_assert_on_manifold
from .tensor import Tensor

RMS_EPS = 1e-8


def time_part(x: Tensor) -> Tensor:
    return T.narrow(x, 0, 1, axis=-1)


def space_part(x: Tensor) -> Tensor:
    return T.narrow(x, 1, None, axis=-1)


def lift_rows(space: Tensor, K: Curvature) -> Tensor:
    """Complete space-part rows to sheet points: time = sqrt(|s|^2 - 1/K)."""
    sq = T.sum_(T.mul(space, space), axis=-1, keepdims=True)
    time = T.sqrt(T.add(sq, -K.radius_sq))
    return T.concat([time, space], axis=-1)


def _metric(n_plus_1: int) -> np.ndarray:
    m = np.ones(n_plus_1)
    m[0] = -1.0
    return m


def rowwise_inner(x: Tensor, y: Tensor) -> Tensor:
    """Per-row Lorentzian inner product, shape (T, 1)."""
    return T.sum_(T.mul(T.mul(x, _metric(x.shape[-1])), y), axis=-1, keepdims=True)


def pair_inner(x: Tensor, y: Tensor) -> Tensor:
    """All-pairs Lorentzian inner products, shape (Tx, Ty)."""
    return T.matmul(T.mul(x, _metric(x.shape[-1])), T.transpose(y))


def centroid_rows(weights: Tensor, values: Tensor, K: Curvature) -> Tensor:
    """Row centroids: (w @ V) / (sqrt(-K) * |Lorentz norm|)."""
    s = T.matmul(weights, values)
    norm = T.sqrt(T.abs_(rowwise_inner(s, s)))
    if np.any(norm.data == 0.0):
        raise DegenerateCentroidError("combination with zero Lorentzian norm")
    return T.div(s, T.mul(norm, math.sqrt(-K.K)))


def lorentz_residual(x: Tensor, fx: Tensor, K: Curvature, w1=1.0, w2=1.0) -> Tensor:
    """Weighted residual a1*x + a2*fx renormalized onto the sheet."""
    combo = T.add(T.mul(x, w1), T.mul(fx, w2))
    norm = T.sqrt(T.abs_(rowwise_inner(combo, combo)))
    if np.any(norm.data == 0.0):
        raise DegenerateCentroidError("degenerate residual combination")
    return T.div(combo, T.mul(norm, math.sqrt(-K.K)))


def sigmoid(x: Tensor) -> Tensor:
    return T.div(1.0, T.add(1.0, T.exp(T.mul(x, -1.0))))


def silu(x: Tensor) -> Tensor:
    return T.mul(x, sigmoid(x))


def lorentz_activation(x: Tensor, K: Curvature,
                       act: Callable[[Tensor], Tensor] = silu) -> Tensor:
    """Apply `act` to the space part and recompute the time coordinate."""
    return lift_rows(act(space_part(x)), K)


def lorentz_concat(xs: Iterable[Tensor], K: Curvature) -> Tensor:
    """Concatenate space parts in order and lift back to the sheet."""
    xs = list(xs)
    if not xs:
        raise ValueError("lorentz_concat of empty sequence")
    return lift_rows(T.concat([space_part(x) for x in xs], axis=-1), K)


class LorentzLinear:
    """Affine map on the ambient point followed by a lift.

    out = sqrt(K_out/K_in) * [sqrt(|W^T x + b|^2 - 1/K_out), W^T x + b].
    In-model usage always has K_in == K_out (prefactor 1); cross-curvature
    transport goes through curvature rescaling instead.
    """

    def __init__(self, n_in: int, n_out: int, K: Curvature,
                 rng: Optional[np.random.Generator] = None,
                 K_out: Optional[Curvature] = None, init_std: float = 0.02,
                 name: str = "linear"):
        self.K_in = K
        self.K_out = K_out if K_out is not None else K
        self.name = name
        if rng is None:
            w = np.zeros((n_in + 1, n_out))
        else:
            w = rng.normal(0.0, init_std, size=(n_in + 1, n_out))
        self.W = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        u = T.add(T.matmul(x, self.W), self.b)
        out = lift_rows(u, self.K_out)
        factor = math.sqrt(self.K_out.K / self.K_in.K)
        if factor != 1.0:
            out = T.mul(out, factor)
        debug_assert_on_manifold(out.data, self.K_out, self.name)
        return out

    def parameters(self):
        return [(f"{self.name}.W", self.W), (f"{self.name}.b", self.b)]


class LorentzRMSNorm:
    """RMS-normalize the space part (learned gain) and re-lift.

    The RMS denominator is floored at `eps` instead of perturbed
    additively, which keeps the map exactly invariant to positive
    rescaling of the space part away from the all-zero case.
    """

    def __init__(self, n: int, K: Curvature, eps: float = RMS_EPS,
                 name: str = "norm"):
        self.K = K
        self.eps = eps
        self.name = name
        self.gain = Tensor(np.ones(n), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        s = space_part(x)
        ms = T.mean(T.mul(s, s), axis=-1, keepdims=True)
        rms = T.sqrt(T.clamp_min(ms, self.eps * self.eps))
        out = lift_rows(T.mul(T.div(s, rms), self.gain), self.K)
        debug_assert_on_manifold(out.data, self.K, self.name)
        return out

    def parameters(self):
        return [(f"{self.name}.gain", self.gain)]


class SwiGLUFeedForward:
    """Gated feedforward: space-part product of a SiLU gate and a value
    branch, re-lifted and sent through an output map."""

    def __init__(self, n: int, hidden: int, K: Curvature,
                 rng: np.random.Generator, name: str = "ffn"):
        self.K = K
        self.name = name
        self.w_gate = LorentzLinear(n, hidden, K, rng, name=f"{name}.w_gate")
        self.w_up = LorentzLinear(n, hidden, K, rng, name=f"{name}.w_up")
        self.w_down = LorentzLinear(hidden, n, K, rng, name=f"{name}.w_down")

    def __call__(self, x: Tensor) -> Tensor:
        gate = silu(space_part(self.w_gate(x)))
        val = space_part(self.w_up(x))
        y = lift_rows(T.mul(gate, val), self.K)
        out = self.w_down(y)
        debug_assert_on_manifold(out.data, self.K, self.name)
        return out

    def parameters(self):
        return (self.w_gate.parameters() + self.w_up.parameters()
                + self.w_down.parameters())


def rescale_rows(x: Tensor, K_from: Curvature, K_to: Curvature) -> Tensor:
    """Carry all rows between sheets: x * sqrt(K_from/K_to)."""
    factor = math.sqrt(K_from.K / K_to.K)
    return T.mul(x, factor) if factor != 1.0 else x
