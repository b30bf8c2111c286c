"""Training loop: seeded batching, AdamW with warmup + cosine decay,
append-only metrics CSV, balance-bias updates, and periodic checkpoints.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from . import tokenizer
from .checkpoint import atomic_write_bytes, save_checkpoint
from .experts import update_balance_bias
from .model import LanguageModel, ModelConfig
from .tensor import AdamW


class TrainingDiverged(RuntimeError):
    """Loss became NaN; the offending batch was dumped beside the metrics."""


@dataclass
class TrainSettings:
    steps: int = 1000
    batch_size: int = 8
    seq_len: int = 64
    learning_rate: Optional[float] = None  # default depends on variant
    weight_decay: float = 0.01
    warmup_frac: float = 0.03
    final_lr_frac: float = 0.1
    checkpoint_every: int = 0  # 0 = only at the end

    def resolved_lr(self, variant: str) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 4e-4 if variant == "HELM-MiCE" else 2e-4


def cosine_lr(step: int, total: int, peak: float,
              warmup_frac: float = 0.03, final_frac: float = 0.1) -> float:
    """Linear warmup then cosine decay to final_frac * peak at the last step."""
    warmup = max(1, math.ceil(warmup_frac * total))
    if step < warmup:
        return peak * (step + 1) / warmup
    progress = (step - warmup) / max(1, total - 1 - warmup)
    cos = 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))
    return peak * (final_frac + (1.0 - final_frac) * cos)


def load_corpus(path) -> np.ndarray:
    """Tokenize a UTF-8 text file, or every file of a directory in
    lexicographic order (EOS-joined)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"corpus not found: {path}")
    files = sorted(fp for fp in p.rglob("*") if fp.is_file()) if p.is_dir() else [p]
    if not files:
        raise FileNotFoundError(f"corpus directory is empty: {path}")
    pieces = []
    for fp in files:
        pieces.append(tokenizer.encode(fp.read_bytes()))
        pieces.append(np.asarray([tokenizer.EOS], dtype=np.int64))
    return np.concatenate(pieces)


def corpus_hash(ids: np.ndarray) -> str:
    return hashlib.sha256(ids.astype("<i8").tobytes()).hexdigest()


def sample_batch(ids: np.ndarray, rng: np.random.Generator,
                 batch_size: int, seq_len: int):
    """Fixed-length contiguous chunks; inputs and one-shifted targets."""
    if ids.size < seq_len + 1:
        raise ValueError("corpus shorter than one training sequence")
    starts = rng.integers(0, ids.size - seq_len - 1, size=batch_size)
    xs = np.stack([ids[s:s + seq_len] for s in starts])
    ys = np.stack([ids[s + 1:s + seq_len + 1] for s in starts])
    return xs, ys


def _metrics_header(n_experts: int) -> str:
    cols = ["step", "loss", "lr", "grad_norm", "max_manifold_violation"]
    cols += [f"expert_load_{i}" for i in range(n_experts)]
    return ",".join(cols)


def train_loop(model: LanguageModel, corpus_ids: np.ndarray, run_dir,
               settings: TrainSettings, quiet: bool = True) -> dict:
    """Train in place; returns summary stats.  Writes manifest.json,
    metrics.csv, and ckpt-<step>.bin under run_dir."""
    cfg = model.cfg
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "corpus_sha256": corpus_hash(corpus_ids),
        "corpus_tokens": int(corpus_ids.size),
        "settings": {
            "steps": settings.steps, "batch_size": settings.batch_size,
            "seq_len": settings.seq_len,
            "learning_rate": settings.resolved_lr(cfg.variant),
            "weight_decay": settings.weight_decay,
            "warmup_frac": settings.warmup_frac,
            "final_lr_frac": settings.final_lr_frac,
        },
        "created_unix": time.time(),
    }
    atomic_write_bytes(run_dir / "manifest.json",
                       json.dumps(manifest, indent=2, sort_keys=True).encode())

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    batch_rng = np.random.default_rng(seeds[0])
    peak_lr = settings.resolved_lr(cfg.variant)
    opt = AdamW(model.param_tensors(), lr=peak_lr,
                weight_decay=settings.weight_decay)

    n_experts = cfg.routed_experts if cfg.variant == "HELM-MiCE" else 0
    metrics_path = run_dir / "metrics.csv"
    losses = []

    with open(metrics_path, "w", encoding="utf-8") as metrics:
        metrics.write(_metrics_header(n_experts) + "\n")
        for step in range(settings.steps):
            lr = cosine_lr(step, settings.steps, peak_lr,
                           settings.warmup_frac, settings.final_lr_frac)
            opt.lr = lr
            xs, ys = sample_batch(corpus_ids, batch_rng,
                                  settings.batch_size, settings.seq_len)
            if n_experts:
                for block in model.blocks:
                    if block.is_mixture:
                        block.ffn.stats.reset_batch()
            total = None
            worst_violation = 0.0
            for b in range(xs.shape[0]):
                seq_loss = model.loss(xs[b], ys[b])
                worst_violation = max(worst_violation, model.last_violation)
                total = seq_loss if total is None else T.add(total, seq_loss)
            batch_loads = model.batch_expert_loads() if n_experts else np.zeros(0)
            loss = T.mul(total, 1.0 / xs.shape[0])
            loss_val = loss.item()
            if math.isnan(loss_val) or math.isinf(loss_val):
                dump = run_dir / f"diverged-step{step}.json"
                atomic_write_bytes(dump, json.dumps(
                    {"step": step, "inputs": xs.tolist(),
                     "targets": ys.tolist()}, sort_keys=True).encode())
                raise TrainingDiverged(f"non-finite loss at step {step}; "
                                       f"batch dumped to {dump}")
            loss.backward()
            grad_norm = math.sqrt(sum(float(np.sum(p.grad * p.grad))
                                      for p in opt.params if p.grad is not None))
            opt.step()

            if n_experts:
                for block in model.blocks:
                    if block.is_mixture:
                        update_balance_bias(block.ffn.gate_state, block.ffn.stats)

            row = [str(step), repr(loss_val), repr(lr), repr(grad_norm),
                   repr(worst_violation)]
            row += [repr(float(v)) for v in batch_loads]
            metrics.write(",".join(row) + "\n")
            metrics.flush()
            losses.append(loss_val)
            if not quiet and (step % 50 == 0 or step == settings.steps - 1):
                print(f"step {step}: loss {loss_val:.4f} lr {lr:.2e}")

            if settings.checkpoint_every and \
                    (step + 1) % settings.checkpoint_every == 0:
                _write_checkpoint(model, opt, batch_rng, step + 1, run_dir)

    _write_checkpoint(model, opt, batch_rng, settings.steps, run_dir)
    return {"final_loss": losses[-1], "losses": losses,
            "metrics_path": str(metrics_path)}


def _write_checkpoint(model: LanguageModel, opt: AdamW,
                      rng: np.random.Generator, step: int, run_dir: Path) -> None:
    arrays = dict(model.state_arrays())
    for (name, _), m, v in zip(model.parameters(), opt.m, opt.v):
        arrays[f"opt.m.{name}"] = m
        arrays[f"opt.v.{name}"] = v
    state = rng.bit_generator.state
    rng_state = {"bit_generator": state["bit_generator"],
                 "state": state["state"]["state"],
                 "inc": state["state"]["inc"],
                 "has_uint32": state["has_uint32"],
                 "uinteger": state["uinteger"],
                 "opt_t": opt.t}
    save_checkpoint(run_dir / f"ckpt-{step}.bin", model.cfg.to_dict(),
                    step, rng_state, arrays)


def restore_model(path) -> LanguageModel:
    """Build a model from a checkpoint and load its parameters."""
    from .checkpoint import load_checkpoint
    header, arrays = load_checkpoint(path)
    cfg = ModelConfig.from_dict(header["config"])
    model = LanguageModel(cfg)
    model.load_state_arrays(arrays)
    return model
