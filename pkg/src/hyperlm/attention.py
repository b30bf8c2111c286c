"""Rotary-encoded Lorentzian attention, plus the latent-compressed variant.

Attention scores are negative squared Lorentzian distances between
position-rotated queries and keys; attention outputs are Lorentzian
centroids of the value rows.  The latent variant compresses keys/values
(and queries) through low-dimensional latent sheets so that inference
only ever caches the latent key-value row and one shared position key
per token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import tensor as T
from .layers import (LorentzLinear, centroid_rows, lift_rows, lorentz_concat,
                     pair_inner, space_part, time_part)
from .lorentz import Curvature, debug_assert_on_manifold
from .tensor import Tensor


@dataclass(frozen=True)
class RotaryConfig:
    """Blockwise 2-D rotation schedule over an even space dimension."""

    head_dim: int
    base: float = 10000.0

    def __post_init__(self):
        if self.head_dim % 2 != 0 or self.head_dim <= 0:
            raise ValueError("rotary head_dim must be a positive even integer")

    @property
    def angles(self) -> np.ndarray:
        """Per-block angles base^(-2(l-1)/d), l = 1..d/2, strictly decreasing."""
        l = np.arange(self.head_dim // 2)
        return self.base ** (-2.0 * l / self.head_dim)

    def cos_sin(self, positions) -> tuple:
        pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
        phase = pos * self.angles[None, :]
        return np.cos(phase), np.sin(phase)


def apply_rotary(x: Tensor, positions, cfg: RotaryConfig) -> Tensor:
    """Rotate the space part blockwise by position; time is untouched."""
    cos, sin = cfg.cos_sin(positions)
    rotated = T.rotate_pairs(space_part(x), cos, sin)
    return T.concat([time_part(x), rotated], axis=-1)


def neg_sq_distances(q: Tensor, k: Tensor, K: Curvature) -> Tensor:
    """-d_L^2 for all query/key pairs: 2<q,k>_L - 2/K, shape (Tq, Tk)."""
    return T.add(T.mul(pair_inner(q, k), 2.0), -2.0 * K.radius_sq)


def causal_mask(t_q: int, t_k: int, offset: int = 0) -> np.ndarray:
    """True where key position exceeds query position (disallowed)."""
    qi = np.arange(t_q)[:, None] + offset
    kj = np.arange(t_k)[None, :]
    return kj > qi


class SelfAttention:
    """Multi-head Lorentzian self-attention with rotary-encoded q/k."""

    def __init__(self, model_dim: int, heads: int, head_dim: int, K: Curvature,
                 rng: np.random.Generator, rope_base: float = 10000.0,
                 name: str = "attn"):
        self.K = K
        self.heads = heads
        self.head_dim = head_dim
        self.scale = math.sqrt(head_dim)
        self.rotary = RotaryConfig(head_dim, rope_base)
        self.name = name
        self.w_q = [LorentzLinear(model_dim, head_dim, K, rng, name=f"{name}.h{i}.w_q")
                    for i in range(heads)]
        self.w_k = [LorentzLinear(model_dim, head_dim, K, rng, name=f"{name}.h{i}.w_k")
                    for i in range(heads)]
        self.w_v = [LorentzLinear(model_dim, head_dim, K, rng, name=f"{name}.h{i}.w_v")
                    for i in range(heads)]
        self.w_out = LorentzLinear(heads * head_dim, model_dim, K, rng,
                                   name=f"{name}.w_out")

    def __call__(self, x: Tensor, positions, causal: bool = True) -> Tensor:
        t = x.shape[0]
        mask = causal_mask(t, t) if causal else None
        outs = []
        for i in range(self.heads):
            q = apply_rotary(self.w_q[i](x), positions, self.rotary)
            k = apply_rotary(self.w_k[i](x), positions, self.rotary)
            v = self.w_v[i](x)
            scores = T.mul(neg_sq_distances(q, k, self.K), 1.0 / self.scale)
            weights = T.masked_softmax(scores, mask)
            outs.append(centroid_rows(weights, v, self.K))
        merged = lorentz_concat(outs, self.K)
        out = self.w_out(merged)
        debug_assert_on_manifold(out.data, self.K, self.name)
        return out

    def parameters(self):
        params = []
        for group in (self.w_q, self.w_k, self.w_v):
            for layer in group:
                params.extend(layer.parameters())
        params.extend(self.w_out.parameters())
        return params


class KVCache:
    """Per-layer inference cache: one latent KV row and one shared
    position-encoded key row per generated position."""

    def __init__(self, latent_kv: int, rope_head_dim: int):
        self.latent_kv = latent_kv
        self.rope_head_dim = rope_head_dim
        self.kv_rows: List[np.ndarray] = []
        self.rope_rows: List[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.kv_rows)

    def append(self, kv_row: np.ndarray, rope_row: np.ndarray) -> None:
        if kv_row.shape != (self.latent_kv + 1,):
            raise ValueError("latent KV row has wrong width")
        if rope_row.shape != (self.rope_head_dim + 1,):
            raise ValueError("position key row has wrong width")
        self.kv_rows.append(np.asarray(kv_row, dtype=np.float64).copy())
        self.rope_rows.append(np.asarray(rope_row, dtype=np.float64).copy())

    def stacked(self) -> tuple:
        return np.stack(self.kv_rows), np.stack(self.rope_rows)

    def scalars_per_token(self) -> int:
        """Stored scalars per position: space dims plus one time each."""
        return (self.latent_kv + 1) + (self.rope_head_dim + 1)


class LatentAttention:
    """Latent-compressed multi-head attention with a decoupled rotary path.

    Tokens are down-projected to latent query/key-value sheets, re-expanded
    per head, and augmented with rotary-encoded decoupled query heads plus
    one shared rotary key built from the KV latent.  Scores use the
    printed scale sqrt(heads + rope_head_dim) unless overridden.
    """

    def __init__(self, model_dim: int, heads: int, head_dim: int, K: Curvature,
                 latent_q: int, latent_kv: int, rope_head_dim: int,
                 rng: np.random.Generator, rope_base: float = 10000.0,
                 up_reduction: bool = False, score_scale: Optional[float] = None,
                 name: str = "attn"):
        if latent_q > model_dim // 2 or latent_kv > model_dim // 2:
            raise ValueError("latent dims must not exceed half the model dim")
        if rope_head_dim > head_dim:
            raise ValueError("rope_head_dim must not exceed head_dim")
        self.K = K
        self.heads = heads
        self.head_dim = head_dim
        self.up_dim = head_dim // 2 if up_reduction else head_dim
        self.latent_q = latent_q
        self.latent_kv = latent_kv
        self.rope_head_dim = rope_head_dim
        self.scale = score_scale if score_scale else math.sqrt(heads + rope_head_dim)
        self.rotary = RotaryConfig(rope_head_dim, rope_base)
        self.name = name
        self.w_dq = LorentzLinear(model_dim, latent_q, K, rng, name=f"{name}.w_dq")
        self.w_dkv = LorentzLinear(model_dim, latent_kv, K, rng, name=f"{name}.w_dkv")
        self.w_uq = LorentzLinear(latent_q, heads * self.up_dim, K, rng,
                                  name=f"{name}.w_uq")
        self.w_uk = LorentzLinear(latent_kv, heads * self.up_dim, K, rng,
                                  name=f"{name}.w_uk")
        self.w_uv = LorentzLinear(latent_kv, heads * self.up_dim, K, rng,
                                  name=f"{name}.w_uv")
        self.w_qr = LorentzLinear(latent_q, heads * rope_head_dim, K, rng,
                                  name=f"{name}.w_qr")
        self.w_kr = LorentzLinear(latent_kv, rope_head_dim, K, rng,
                                  name=f"{name}.w_kr")
        self.w_out = LorentzLinear(heads * self.up_dim, model_dim, K, rng,
                                   name=f"{name}.w_out")

    def _heads(self, batch: Tensor, width: int) -> List[Tensor]:
        """Split the space part into per-head slices and re-lift each."""
        s = space_part(batch)
        return [lift_rows(T.narrow(s, i * width, (i + 1) * width, axis=-1), self.K)
                for i in range(self.heads)]

    def _attend(self, q_heads, qr_heads, k_heads, k_rope, v_heads,
                mask: Optional[np.ndarray]) -> Tensor:
        outs = []
        for i in range(self.heads):
            q = lorentz_concat([q_heads[i], qr_heads[i]], self.K)
            k = lorentz_concat([k_heads[i], k_rope], self.K)
            scores = T.mul(neg_sq_distances(q, k, self.K), 1.0 / self.scale)
            weights = T.masked_softmax(scores, mask)
            outs.append(centroid_rows(weights, v_heads[i], self.K))
        merged = lorentz_concat(outs, self.K)
        out = self.w_out(merged)
        debug_assert_on_manifold(out.data, self.K, self.name)
        return out

    def __call__(self, x: Tensor, positions, causal: bool = True) -> Tensor:
        """Full-sequence forward over a (T, model_dim+1) batch."""
        t = x.shape[0]
        c_q = self.w_dq(x)
        c_kv = self.w_dkv(x)
        q_heads = self._heads(self.w_uq(c_q), self.up_dim)
        k_heads = self._heads(self.w_uk(c_kv), self.up_dim)
        v_heads = self._heads(self.w_uv(c_kv), self.up_dim)
        qr_heads = [apply_rotary(h, positions, self.rotary)
                    for h in self._heads(self.w_qr(c_q), self.rope_head_dim)]
        k_rope = apply_rotary(self.w_kr(c_kv), positions, self.rotary)
        mask = causal_mask(t, t) if causal else None
        return self._attend(q_heads, qr_heads, k_heads, k_rope, v_heads, mask)

    def step(self, x_t: Tensor, position: int, cache: KVCache) -> Tensor:
        """Incremental forward for one token; appends its latents to the cache."""
        if len(cache) != position:
            raise ValueError(f"cache holds {len(cache)} rows but position is {position}")
        c_q = self.w_dq(x_t)
        c_kv = self.w_dkv(x_t)
        k_rope_t = apply_rotary(self.w_kr(c_kv), [position], self.rotary)
        cache.append(c_kv.data[0], k_rope_t.data[0])

        kv_all, rope_all = cache.stacked()
        c_kv_all = Tensor(kv_all)
        k_heads = self._heads(self.w_uk(c_kv_all), self.up_dim)
        v_heads = self._heads(self.w_uv(c_kv_all), self.up_dim)
        k_rope = Tensor(rope_all)
        q_heads = self._heads(self.w_uq(c_q), self.up_dim)
        qr_heads = [apply_rotary(h, [position], self.rotary)
                    for h in self._heads(self.w_qr(c_q), self.rope_head_dim)]
        return self._attend(q_heads, qr_heads, k_heads, k_rope, v_heads, None)

    def parameters(self):
        params = []
        for layer in (self.w_dq, self.w_dkv, self.w_uq, self.w_uk, self.w_uv,
                      self.w_qr, self.w_kr, self.w_out):
            params.extend(layer.parameters())
        return params


@dataclass(frozen=True)
class CacheReportRow:
    layer: int
    baseline_scalars: int
    hmla_scalars: int
    ratio: float


def cache_report(layers: int, heads: int, head_dim: int, latent_kv: int,
                 rope_head_dim: int) -> List[CacheReportRow]:
    """Per-layer cached space scalars per token: full-KV baseline
    (2 * head_dim * heads) vs latent caching (latent_kv + rope_head_dim)."""
    baseline = 2 * head_dim * heads
    compressed = latent_kv + rope_head_dim
    rows = [CacheReportRow(i, baseline, compressed, baseline / compressed)
            for i in range(layers)]
    return rows
