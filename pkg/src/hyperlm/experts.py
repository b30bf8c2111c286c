"""Mixture of curvature experts: sigmoid-affinity gating with top-k
routing, per-expert sheet transport, centroid mixing, and the
auxiliary-loss-free balance-bias scheme plus a sequence-wise balance loss.

Each expert is a gated feedforward living on its own curvature; tokens
are carried to an expert's sheet by curvature rescaling, processed, and
carried back before mixing, so every mixed vector lies on the input sheet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as T
from .layers import (SwiGLUFeedForward, lorentz_residual, rescale_rows,
                     rowwise_inner, sigmoid, space_part)
from .lorentz import Curvature, DegenerateCentroidError, debug_assert_on_manifold
from .tensor import Tensor

_GATE_FLOOR = 1e-30


def spaced_curvatures(count: int, lo: float = -2.0, hi: float = -0.1) -> List[float]:
    """Uniformly spaced negative curvatures from hi down to lo."""
    if count == 1:
        return [hi]
    return list(np.linspace(hi, lo, count))


@dataclass
class MixtureConfig:
    routed: int
    active: int
    shared: int = 1
    routed_curvatures: Optional[Sequence[float]] = None
    shared_curvatures: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.routed == 0:
            if self.active != 0:
                raise ValueError("shared-only mixture must have active = 0")
        elif not (1 <= self.active <= self.routed):
            raise ValueError("active expert count must be in [1, routed]")
        if self.routed_curvatures is None:
            self.routed_curvatures = spaced_curvatures(self.routed)
        if self.shared_curvatures is None:
            self.shared_curvatures = [-1.0] * self.shared
        if len(self.routed_curvatures) != self.routed:
            raise ValueError("one curvature per routed expert required")
        if len(self.shared_curvatures) != self.shared:
            raise ValueError("one curvature per shared expert required")
        for k in list(self.routed_curvatures) + list(self.shared_curvatures):
            if k >= 0:
                raise ValueError("expert curvatures must be negative")


class GateState:
    """Routing parameters: learned centroids plus non-learned balance biases."""

    def __init__(self, model_dim: int, routed: int,
                 rng: np.random.Generator, bias_step: float = 0.001,
                 name: str = "gate"):
        self.centroids = Tensor(rng.normal(0.0, 0.02, size=(model_dim, routed)),
                                requires_grad=True)
        self.bias = np.zeros(routed)
        self.bias_step = bias_step
        self.name = name

    def parameters(self):
        return [(f"{self.name}.centroids", self.centroids)]


@dataclass
class ExpertStats:
    """Routed-token counts for the current batch and cumulatively."""

    routed: int
    batch_counts: np.ndarray = field(default=None)
    total_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.batch_counts = np.zeros(self.routed)
        self.total_counts = np.zeros(self.routed)

    def record(self, selected: np.ndarray) -> None:
        """Accumulate routing counts into the current batch window."""
        counts = np.bincount(selected.ravel(), minlength=self.routed).astype(float)
        self.batch_counts = self.batch_counts + counts
        self.total_counts += counts

    def reset_batch(self) -> None:
        self.batch_counts = np.zeros(self.routed)


def gate(space: Tensor, state: GateState, cfg: MixtureConfig):
    """Route each row to its top-k experts.

    Affinities are sigmoid(space . centroid); the top-k selection uses
    bias-shifted affinities, but the mixing weights renormalize the
    *unbiased* affinities of the selected experts.  Returns the selected
    index array (T, active), the dense weight matrix (T, routed) with
    zeros off-selection, and the raw affinities.
    """
    affinities = sigmoid(T.matmul(space, state.centroids))
    biased = affinities.data + state.bias[None, :]
    # stable sort on the negated scores: ties go to the lowest index
    order = np.argsort(-biased, axis=1, kind="stable")
    selected = order[:, :cfg.active]
    mask = np.zeros_like(affinities.data)
    np.put_along_axis(mask, selected, 1.0, axis=1)

    kept = T.mul(affinities, mask)
    denom = T.sum_(kept, axis=-1, keepdims=True)
    weights = T.div(kept, T.clamp_min(denom, _GATE_FLOOR))
    dead = denom.data[:, 0] <= _GATE_FLOOR
    if dead.any():
        # effectively-zero affinities: uniform over the selected set
        weights = T.mul(weights, (~dead)[:, None].astype(float))
        weights = T.add(weights, np.where(dead[:, None], mask / cfg.active, 0.0))
    return selected, weights, affinities


def update_balance_bias(state: GateState, stats: ExpertStats) -> None:
    """Nudge routing biases against the current batch's load imbalance."""
    counts = stats.batch_counts
    mean = counts.mean()
    state.bias[counts > mean] -= state.bias_step
    state.bias[counts < mean] += state.bias_step


def sequence_aux_loss(affinities: Tensor, selected: np.ndarray,
                      cfg: MixtureConfig, weight: float) -> Tensor:
    """Sequence-wise balance penalty, differentiable through affinities.

    loss = weight * routed * sum_j frac_j * P_j, where frac_j is expert
    j's share of the sequence's routing slots and P_j the mean normalized
    affinity.  Uniform routing with uniform affinities gives exactly
    `weight`; concentration raises it.
    """
    if weight == 0.0:
        return Tensor(0.0)
    t = affinities.shape[0]
    counts = np.bincount(selected.ravel(), minlength=cfg.routed).astype(float)
    frac = counts / (cfg.active * t)
    row_sum = T.clamp_min(T.sum_(affinities, axis=-1, keepdims=True), _GATE_FLOOR)
    mean_affinity = T.mean(T.div(affinities, row_sum), axis=0)
    return T.mul(T.sum_(T.mul(mean_affinity, frac)), weight * cfg.routed)


class CurvatureMixtureFFN:
    """Routed + shared curvature experts mixed by a Lorentzian centroid,
    with a residual connection back to the block input."""

    def __init__(self, model_dim: int, hidden: int, K: Curvature,
                 cfg: MixtureConfig, rng: np.random.Generator,
                 bias_step: float = 0.001, weighted: bool = True,
                 name: str = "mix"):
        self.K = K
        self.cfg = cfg
        self.weighted = weighted
        self.name = name
        self.gate_state = GateState(model_dim, cfg.routed, rng,
                                    bias_step=bias_step, name=f"{name}.gate")
        self.stats = ExpertStats(cfg.routed)
        self.routed_K = [Curvature(k) for k in cfg.routed_curvatures]
        self.shared_K = [Curvature(k) for k in cfg.shared_curvatures]
        self.routed = [SwiGLUFeedForward(model_dim, hidden, ke, rng,
                                         name=f"{name}.routed{i}")
                       for i, ke in enumerate(self.routed_K)]
        self.shared = [SwiGLUFeedForward(model_dim, hidden, ke, rng,
                                         name=f"{name}.shared{i}")
                       for i, ke in enumerate(self.shared_K)]
        self.last_affinities: Optional[Tensor] = None
        self.last_selected: Optional[np.ndarray] = None

    def _through_expert(self, x: Tensor, expert: SwiGLUFeedForward,
                        K_e: Curvature) -> Tensor:
        carried = rescale_rows(x, self.K, K_e)
        debug_assert_on_manifold(carried.data, K_e, f"{self.name}.transport_in")
        out = rescale_rows(expert(carried), K_e, self.K)
        debug_assert_on_manifold(out.data, self.K, f"{self.name}.transport_out")
        return out

    def __call__(self, x: Tensor) -> Tensor:
        total = None
        for expert, ke in zip(self.shared, self.shared_K):
            y = self._through_expert(x, expert, ke)
            total = y if total is None else T.add(total, y)

        if self.routed:
            selected, weights, affinities = gate(space_part(x), self.gate_state,
                                                 self.cfg)
            self.stats.record(selected)
            self.last_affinities = affinities
            self.last_selected = selected
            hard_mask = np.zeros_like(weights.data)
            np.put_along_axis(hard_mask, selected, 1.0, axis=1)
            for j, (expert, ke) in enumerate(zip(self.routed, self.routed_K)):
                if self.weighted:
                    coeff = T.narrow(weights, j, j + 1, axis=-1)
                else:
                    coeff = Tensor(hard_mask[:, j:j + 1])
                z = T.mul(self._through_expert(x, expert, ke), coeff)
                total = z if total is None else T.add(total, z)

        norm = T.sqrt(T.abs_(rowwise_inner(total, total)))
        if np.any(norm.data == 0.0):
            raise DegenerateCentroidError("expert mixture has zero Lorentzian norm")
        mix = T.div(total, T.mul(norm, math.sqrt(-self.K.K)))
        out = lorentz_residual(x, mix, self.K)
        debug_assert_on_manifold(out.data, self.K, self.name)
        return out

    def aux_loss(self, weight: float) -> Tensor:
        return sequence_aux_loss(self.last_affinities, self.last_selected,
                                 self.cfg, weight)

    def parameters(self):
        params = list(self.gate_state.parameters())
        for expert in self.shared + self.routed:
            params.extend(expert.parameters())
        return params
