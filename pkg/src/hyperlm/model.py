"""Decoder-only hyperbolic language models (dense and curvature-expert).

A model is a hyperbolic word-embedding table, a stack of decoder blocks
(pre-norm attention and feedforward sublayers joined by Lorentzian
residuals), one final normalization, and a Euclidean logit map over the
normalized space parts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as T
from . import tokenizer
from .attention import KVCache, LatentAttention, SelfAttention
from .experts import CurvatureMixtureFFN, MixtureConfig, spaced_curvatures
from .layers import (LorentzRMSNorm, SwiGLUFeedForward, lift_rows,
                     lorentz_residual, space_part)
from .lorentz import Curvature, manifold_violation
from .tensor import Tensor

VARIANT_DENSE = "HELM-D"
VARIANT_MICE = "HELM-MiCE"


@dataclass
class ModelConfig:
    """Everything needed to build and train a model; JSON keys match
    the field names exactly and unknown keys are rejected."""

    variant: str = VARIANT_DENSE
    layers: int = 2
    heads: int = 2
    head_dim: int = 8
    vocab_size: int = tokenizer.VOCAB_SIZE
    max_seq_len: int = 128
    curvature: float = -1.0
    rope_base: float = 10000.0
    seed: int = 0
    ffn_hidden: Optional[int] = None
    # curvature-expert settings (HELM-MiCE)
    routed_experts: int = 4
    active_experts: int = 2
    shared_experts: int = 1
    expert_hidden: Optional[int] = None
    expert_curvatures: Optional[List[float]] = None
    shared_curvature: float = -1.0
    balance_bias_step: float = 0.001
    aux_loss_weight: float = 0.001
    mixture_weighted: bool = True
    # latent-attention settings (HELM-MiCE)
    latent_q: Optional[int] = None
    latent_kv: Optional[int] = None
    rope_head_dim: Optional[int] = None
    up_reduction: bool = False
    score_scale: Optional[float] = None
    learnable_residual: bool = False

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim

    def __post_init__(self):
        if self.variant not in (VARIANT_DENSE, VARIANT_MICE):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.head_dim % 2 != 0:
            raise ValueError("head_dim must be even for rotary encoding")
        if self.curvature >= 0:
            raise ValueError("curvature must be negative")
        if self.ffn_hidden is None:
            self.ffn_hidden = 4 * self.model_dim
        if self.variant == VARIANT_MICE:
            if self.expert_hidden is None:
                self.expert_hidden = 2 * self.model_dim
            if self.expert_curvatures is None:
                self.expert_curvatures = spaced_curvatures(self.routed_experts)
            if self.latent_q is None:
                self.latent_q = self.model_dim // 2
            if self.latent_kv is None:
                self.latent_kv = self.model_dim // 2
            if self.rope_head_dim is None:
                self.rope_head_dim = max(2, self.head_dim // 4 * 2)
            if self.rope_head_dim % 2 != 0:
                raise ValueError("rope_head_dim must be even")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ValueError(f"unknown config key: {key!r}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ModelConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def micro_dense(seed: int = 0, **overrides) -> ModelConfig:
    return ModelConfig(variant=VARIANT_DENSE, layers=2, heads=2, head_dim=8,
                       seed=seed, **overrides)


def micro_mice(seed: int = 0, **overrides) -> ModelConfig:
    return ModelConfig(variant=VARIANT_MICE, layers=2, heads=2, head_dim=8,
                       latent_q=8, latent_kv=8, rope_head_dim=4,
                       seed=seed, **overrides)


def small_dense(seed: int = 0, **overrides) -> ModelConfig:
    return ModelConfig(variant=VARIANT_DENSE, layers=6, heads=6, head_dim=64,
                       max_seq_len=512, seed=seed, **overrides)


def small_mice(seed: int = 0, **overrides) -> ModelConfig:
    return ModelConfig(variant=VARIANT_MICE, layers=6, heads=6, head_dim=64,
                       max_seq_len=512, latent_kv=64, latent_q=192,
                       rope_head_dim=16, seed=seed, **overrides)


class EmbeddingTable:
    """Space-like embedding rows; only the space part is trained and the
    time coordinate is recomputed at every lookup."""

    def __init__(self, vocab: int, dim: int, K: Curvature,
                 rng: np.random.Generator, init_std: float = 0.02):
        self.K = K
        self.vocab = vocab
        self.space = Tensor(rng.normal(0.0, init_std, size=(vocab, dim)),
                            requires_grad=True)

    def __call__(self, ids) -> Tensor:
        return lift_rows(T.gather_rows(self.space, ids), self.K)

    def parameters(self):
        return [("embedding.space", self.space)]


class DecoderBlock:
    """Pre-norm attention and feedforward sublayers with Lorentzian residuals."""

    def __init__(self, cfg: ModelConfig, index: int, rng: np.random.Generator):
        K = Curvature(cfg.curvature)
        self.K = K
        self.index = index
        d = cfg.model_dim
        name = f"block{index}"
        self.norm_attn = LorentzRMSNorm(d, K, name=f"{name}.norm_attn")
        self.norm_ffn = LorentzRMSNorm(d, K, name=f"{name}.norm_ffn")
        if cfg.variant == VARIANT_MICE:
            self.attn = LatentAttention(
                d, cfg.heads, cfg.head_dim, K,
                latent_q=cfg.latent_q, latent_kv=cfg.latent_kv,
                rope_head_dim=cfg.rope_head_dim, rng=rng,
                rope_base=cfg.rope_base, up_reduction=cfg.up_reduction,
                score_scale=cfg.score_scale, name=f"{name}.attn")
        else:
            self.attn = SelfAttention(d, cfg.heads, cfg.head_dim, K, rng,
                                      rope_base=cfg.rope_base, name=f"{name}.attn")
        self.is_mixture = cfg.variant == VARIANT_MICE and index > 0
        if self.is_mixture:
            mix_cfg = MixtureConfig(routed=cfg.routed_experts,
                                    active=cfg.active_experts,
                                    shared=cfg.shared_experts,
                                    routed_curvatures=cfg.expert_curvatures,
                                    shared_curvatures=[cfg.shared_curvature]
                                    * cfg.shared_experts)
            self.ffn = CurvatureMixtureFFN(d, cfg.expert_hidden, K, mix_cfg, rng,
                                           bias_step=cfg.balance_bias_step,
                                           weighted=cfg.mixture_weighted,
                                           name=f"{name}.ffn")
        else:
            self.ffn = SwiGLUFeedForward(d, cfg.ffn_hidden, K, rng,
                                         name=f"{name}.ffn")
        self.residual_w: Optional[Tensor] = None
        if cfg.learnable_residual:
            self.residual_w = Tensor(np.ones(4), requires_grad=True)
        self._name = name

    def _residual(self, x: Tensor, fx: Tensor, which: int) -> Tensor:
        if self.residual_w is None:
            return lorentz_residual(x, fx, self.K)
        w1 = T.narrow(self.residual_w, 2 * which, 2 * which + 1, axis=-1)
        w2 = T.narrow(self.residual_w, 2 * which + 1, 2 * which + 2, axis=-1)
        return lorentz_residual(x, fx, self.K, w1, w2)

    def __call__(self, x: Tensor, positions, cache: Optional[KVCache] = None) -> Tensor:
        if cache is None:
            attn_out = self.attn(self.norm_attn(x), positions)
        else:
            attn_out = self.attn.step(self.norm_attn(x), int(positions[0]), cache)
        a = self._residual(x, attn_out, 0)
        return self._residual(a, self.ffn(self.norm_ffn(a)), 1)

    def parameters(self):
        params = (self.norm_attn.parameters() + self.attn.parameters()
                  + self.norm_ffn.parameters() + self.ffn.parameters())
        if self.residual_w is not None:
            params.append((f"{self._name}.residual_w", self.residual_w))
        return params


class LanguageModel:
    """Embedding table, decoder stack, final norm, and Euclidean logit head."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.K = Curvature(cfg.curvature)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        self.embedding = EmbeddingTable(cfg.vocab_size, cfg.model_dim, self.K, rng)
        self.blocks = [DecoderBlock(cfg, i, rng) for i in range(cfg.layers)]
        self.final_norm = LorentzRMSNorm(cfg.model_dim, self.K, name="final_norm")
        self.head_w = Tensor(rng.normal(0.0, 0.02, (cfg.model_dim, cfg.vocab_size)),
                             requires_grad=True)
        self.head_b = Tensor(np.zeros(cfg.vocab_size), requires_grad=True)
        self.last_violation = 0.0

    def hidden_states(self, ids) -> Tensor:
        """Run the decoder stack and final norm; returns (T, dim+1) states."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {ids.size} exceeds max_seq_len")
        positions = np.arange(ids.size)
        x = self.embedding(ids)
        worst = manifold_violation(x.data, self.K)
        for block in self.blocks:
            x = block(x, positions)
            worst = max(worst, manifold_violation(x.data, self.K))
        x = self.final_norm(x)
        self.last_violation = max(worst, manifold_violation(x.data, self.K))
        return x

    def logits(self, ids) -> Tensor:
        states = self.hidden_states(ids)
        return T.add(T.matmul(space_part(states), self.head_w), self.head_b)

    def loss(self, ids, targets) -> Tensor:
        """Mean next-token cross-entropy (pad-masked), plus the mixture
        balance penalty on expert variants."""
        out = T.cross_entropy(self.logits(ids), targets,
                              ignore_index=tokenizer.PAD)
        if self.cfg.variant == VARIANT_MICE and self.cfg.aux_loss_weight:
            for block in self.blocks:
                if block.is_mixture:
                    out = T.add(out, block.ffn.aux_loss(self.cfg.aux_loss_weight))
        return out

    def make_caches(self) -> List[Optional[KVCache]]:
        caches = []
        for block in self.blocks:
            if isinstance(block.attn, LatentAttention):
                caches.append(KVCache(block.attn.latent_kv, block.attn.rope_head_dim))
            else:
                caches.append(None)
        return caches

    def _step_hidden(self, token_id: int, position: int, caches) -> Tensor:
        x = self.embedding(np.asarray([token_id], dtype=np.int64))
        for block, cache in zip(self.blocks, caches):
            x = block(x, np.asarray([position]), cache=cache)
        return self.final_norm(x)

    def generate(self, prompt_ids, n_tokens: int, use_cache: bool = False):
        """Greedy decoding; cached and uncached paths produce the same ids."""
        prompt = [tokenizer.BOS] + [int(i) for i in prompt_ids]
        if len(prompt) + n_tokens > self.cfg.max_seq_len:
            raise ValueError("prompt plus generation exceeds max_seq_len")
        out = list(prompt)
        with T.no_grad():
            if use_cache:
                if any(not isinstance(b.attn, LatentAttention) for b in self.blocks):
                    raise ValueError("cached generation requires latent attention")
                caches = self.make_caches()
                states = None
                for pos, tok in enumerate(out):
                    states = self._step_hidden(tok, pos, caches)
                for _ in range(n_tokens):
                    logits = (T.add(T.matmul(space_part(states), self.head_w),
                                    self.head_b)).data[-1]
                    nxt = int(np.argmax(logits))
                    out.append(nxt)
                    states = self._step_hidden(nxt, len(out) - 1, caches)
            else:
                for _ in range(n_tokens):
                    logits = self.logits(np.asarray(out, dtype=np.int64)).data[-1]
                    out.append(int(np.argmax(logits)))
        return out[len(prompt):]

    def parameters(self):
        params = list(self.embedding.parameters())
        for block in self.blocks:
            params.extend(block.parameters())
        params.extend(self.final_norm.parameters())
        params.append(("head.W", self.head_w))
        params.append(("head.b", self.head_b))
        return params

    def param_tensors(self) -> List[Tensor]:
        return [p for _, p in self.parameters()]

    def state_arrays(self) -> dict:
        """All persistent arrays: parameters plus routing bias/stats."""
        state = {name: p.data for name, p in self.parameters()}
        for block in self.blocks:
            if block.is_mixture:
                state[f"{block._name}.ffn.gate_bias"] = block.ffn.gate_state.bias
                state[f"{block._name}.ffn.total_counts"] = block.ffn.stats.total_counts
        return state

    def load_state_arrays(self, state: dict) -> None:
        for name, arr in self.state_arrays().items():
            if name not in state:
                raise ValueError(f"checkpoint missing tensor {name!r}")
            if state[name].shape != arr.shape:
                raise ValueError(f"checkpoint tensor {name!r} has shape "
                                 f"{state[name].shape}, expected {arr.shape}")
            arr[...] = state[name]

    def expert_loads(self) -> np.ndarray:
        """Cumulative routed-token counts summed across mixture blocks."""
        loads = np.zeros(self.cfg.routed_experts)
        seen = False
        for block in self.blocks:
            if block.is_mixture:
                loads += block.ffn.stats.total_counts
                seen = True
        return loads if seen else np.zeros(0)

    def batch_expert_loads(self) -> np.ndarray:
        loads = np.zeros(self.cfg.routed_experts)
        seen = False
        for block in self.blocks:
            if block.is_mixture:
                loads += block.ffn.stats.batch_counts
                seen = True
        return loads if seen else np.zeros(0)


def norm_probe(model: LanguageModel, groups: Sequence[Sequence[str]]):
    """Final-layer space-norm statistics per word group.

    Returns rows (group_label, avg_norm, min, max) over the byte tokens
    of each group's words.
    """
    rows = []
    with T.no_grad():
        for group in groups:
            norms = []
            for word in group:
                ids = np.concatenate(([tokenizer.BOS], tokenizer.encode(word)))
                states = model.hidden_states(ids)
                norms.extend(np.linalg.norm(states.data[1:, 1:], axis=1).tolist())
            norms = np.asarray(norms)
            rows.append((",".join(group), float(norms.mean()),
                         float(norms.min()), float(norms.max())))
    return rows
