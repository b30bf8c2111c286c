"""Numerical checks for the positional-encoding and normalization claims.

Each check is self-contained and seeded: rotary-encoded score shift
invariance, the Abel-summation decay bound, attention that peaks at an
arbitrary chosen relative distance, diagonal/off-diagonal concentration,
and scale invariance of the hyperbolic RMS normalization (forward and
backward).  Checks 1-4 use unscaled squared distances, matching the
constructions they verify.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import tensor as T
from .attention import RotaryConfig
from .layers import LorentzRMSNorm, lift_rows
from .lorentz import Curvature
from .tensor import Tensor


@dataclass
class CheckResult:
    number: int
    name: str
    tolerance: float
    observed: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"[{verdict}] check {self.number} ({self.name}): "
                f"observed {self.observed:.3e} vs tolerance {self.tolerance:.0e}"
                + (f" ({self.detail})" if self.detail else ""))


def _rotate_space(space: np.ndarray, position: float,
                  cfg: RotaryConfig) -> np.ndarray:
    cos, sin = cfg.cos_sin([position])
    even, odd = space[::2], space[1::2]
    out = np.empty_like(space)
    out[::2] = even * cos[0] - odd * sin[0]
    out[1::2] = even * sin[0] + odd * cos[0]
    return out


def _lift(space: np.ndarray, K: float) -> np.ndarray:
    return np.concatenate(([math.sqrt(space @ space - 1.0 / K)], space))


def _neg_sq_dist(x: np.ndarray, y: np.ndarray, K: float) -> float:
    inner = -x[0] * y[0] + x[1:] @ y[1:]
    return -(2.0 / K - 2.0 * inner)


def check_shift_invariance(trials: int = 1000, seed: int = 0,
                           tolerance: float = 1e-9) -> CheckResult:
    """Scores of rotary-encoded pairs depend only on relative position."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d = int(rng.choice([4, 8, 16]))
        cfg = RotaryConfig(d)
        K = float(rng.uniform(-2.0, -0.1))
        q_s = rng.normal(size=d)
        k_s = rng.normal(size=d)
        a, b = (int(x) for x in rng.integers(0, 256, size=2))
        base = _neg_sq_dist(_lift(_rotate_space(q_s, a, cfg), K),
                            _lift(_rotate_space(k_s, b, cfg), K), K)
        for s in (1, 7, 100):
            shifted = _neg_sq_dist(_lift(_rotate_space(q_s, a + s, cfg), K),
                                   _lift(_rotate_space(k_s, b + s, cfg), K), K)
            worst = max(worst, abs(shifted - base))
    return CheckResult(1, "shift-invariance", tolerance, worst,
                       worst <= tolerance)


def decay_bound_series(cfg: RotaryConfig, r: int) -> float:
    """Abel-summation bound term: sum over k of |sum_{l<k} e^{i r theta_l}|."""
    phases = np.exp(1j * r * cfg.angles)
    partial = np.cumsum(phases)
    return float(np.abs(partial).sum())


def check_decay(heads: int = 20, r_max: int = 256, window: int = 64,
                seed: int = 0, ripple_tol: float = 0.05,
                net_decay: float = 0.8) -> CheckResult:
    """Windowed mean of the decay bound is non-increasing in distance.

    The bound term oscillates around its decaying trend, so the check
    averages over non-overlapping windows, allows the declared ripple
    tolerance per step, and additionally requires the last window to sit
    well below the first.  Heads are random even dims at the model's
    angle schedule.
    """
    rng = np.random.default_rng(seed)
    worst_rise = 0.0
    worst_ratio = 0.0
    for _ in range(heads):
        d = 2 * int(rng.integers(16, 65))
        cfg = RotaryConfig(d, 10000.0)
        series = np.asarray([decay_bound_series(cfg, r)
                             for r in range(1, r_max + 1)])
        blocks = series.reshape(-1, window).mean(axis=1)
        rises = np.diff(blocks) / blocks[:-1]
        worst_rise = max(worst_rise, float(rises.max()))
        worst_ratio = max(worst_ratio, float(blocks[-1] / blocks[0]))
    passed = worst_rise <= ripple_tol and worst_ratio <= net_decay
    return CheckResult(2, "long-range-decay", ripple_tol, worst_rise, passed,
                       detail=f"window {window}, r in [1,{r_max}], "
                              f"worst last/first {worst_ratio:.3f} "
                              f"(net-decay bound {net_decay})")


def attention_peak_distance(r: int, seed: int, d: int = 8, t: int = 12,
                            K: float = -1.0) -> int:
    """Argmax relative distance of one score row for a key aligned at r."""
    rng = np.random.default_rng(seed)
    cfg = RotaryConfig(d)
    psi = rng.normal(size=d)
    i = t - 1
    query = _lift(_rotate_space(psi, i, cfg), K)
    scores = []
    for j in range(t):
        key = _lift(_rotate_space(_rotate_space(psi, r, cfg), j, cfg), K)
        scores.append(_neg_sq_dist(query, key, K))
    return i - int(np.argmax(scores))


def check_arbitrary_distance(seeds: int = 100, r_values=range(1, 9),
                             seed: int = 0) -> CheckResult:
    """A key aligned at distance r makes attention peak exactly there."""
    failures = 0
    total = 0
    for r in r_values:
        for s in range(seeds):
            total += 1
            if attention_peak_distance(r, seed + s) != r:
                failures += 1
    return CheckResult(3, "arbitrary-distance-peak", 0.0, float(failures),
                       failures == 0, detail=f"{total - failures}/{total} peaked")


def positional_pattern_weights(norm: float, t: int = 32,
                               off_diagonal: bool = False,
                               K: float = -1.0) -> float:
    """Last-row attention mass on the diagonal (or one-off) position.

    Uses a two-block rotation schedule (d=4, base 35) whose multiples
    never jointly re-approach 0 mod 2pi within the sequence, with the
    space norm split equally across blocks; a single frequency cannot
    concentrate this hard on 32 tokens.
    """
    cfg = RotaryConfig(4, 35.0)
    psi = np.full(4, norm / 2.0)
    i = t - 1
    query = _lift(_rotate_space(psi, i, cfg), K)
    key_base = _rotate_space(psi, 1, cfg) if off_diagonal else psi
    scores = np.asarray([
        _neg_sq_dist(query, _lift(_rotate_space(key_base, j, cfg), K), K)
        for j in range(i + 1)])
    e = np.exp(scores - scores.max())
    weights = e / e.sum()
    return float(weights[i - 1] if off_diagonal else weights[i])


def check_positional_patterns(threshold: float = 0.99) -> CheckResult:
    """Growing space norms concentrate attention on the (off-)diagonal."""
    diag = [positional_pattern_weights(n) for n in (1.0, 4.0, 16.0)]
    off = positional_pattern_weights(4.0, off_diagonal=True)
    monotone = diag[0] < diag[1] < diag[2]
    observed = min(diag[1], off)
    passed = monotone and diag[1] >= threshold and off >= threshold
    return CheckResult(4, "positional-patterns", threshold, observed, passed,
                       detail=f"diag at norm 4: {diag[1]:.4f}, off-diag "
                              f"{off:.4f}, monotone {monotone}")


def check_norm_scale_invariance(seed: int = 0, forward_tol: float = 1e-9,
                                grad_tol: float = 1e-6) -> CheckResult:
    """Normalization output and gain gradient ignore input-space scaling."""
    rng = np.random.default_rng(seed)
    n = 16
    K = Curvature(-1.0)
    base_space = rng.normal(size=(4, n))
    probe = rng.normal(size=(4, n + 1))

    def run(delta: float):
        norm = LorentzRMSNorm(n, K)
        x = lift_rows(Tensor(delta * base_space), K)
        out = norm(x)
        loss = T.sum_(T.mul(out, probe))
        loss.backward()
        return out.data.copy(), norm.gain.grad.copy()

    ref_out, ref_grad = run(1.0)
    worst_fwd = 0.0
    worst_grad = 0.0
    for delta in (1e-3, 1e3, 0.01, 100.0):
        out, grad = run(delta)
        worst_fwd = max(worst_fwd, float(np.abs(out - ref_out).max()))
        rel = np.abs(grad - ref_grad) / np.maximum(np.abs(ref_grad), 1e-12)
        worst_grad = max(worst_grad, float(rel.max()))
    passed = worst_fwd <= forward_tol and worst_grad <= grad_tol
    return CheckResult(5, "norm-scale-invariance", forward_tol,
                       max(worst_fwd, worst_grad * 1e-3), passed,
                       detail=f"forward {worst_fwd:.2e} (tol {forward_tol:.0e}),"
                              f" gain-grad rel {worst_grad:.2e} (tol {grad_tol:.0e})")


CHECKS = {
    1: check_shift_invariance,
    2: check_decay,
    3: check_arbitrary_distance,
    4: check_positional_patterns,
    5: check_norm_scale_invariance,
}


def run_checks(numbers: Optional[List[int]] = None) -> List[CheckResult]:
    numbers = sorted(CHECKS) if not numbers else numbers
    return [CHECKS[n]() for n in numbers]
