"""Independent plain-numpy evaluations of every formula under test.

Nothing here imports the library's layer/attention/expert code; these
are the reference implementations the tests compare against.
"""

import numpy as np


def lift_np(space, K):
    space = np.asarray(space, dtype=np.float64)
    t = np.sqrt(space @ space - 1.0 / K)
    return np.concatenate(([t], space))


def lift_rows_np(rows, K):
    rows = np.asarray(rows, dtype=np.float64)
    t = np.sqrt(np.sum(rows * rows, axis=1) - 1.0 / K)
    return np.concatenate([t[:, None], rows], axis=1)


def inner_np(x, y):
    return -x[0] * y[0] + x[1:] @ y[1:]


def inner_rows_np(xs, ys):
    return -np.outer(xs[:, 0], ys[:, 0]) + xs[:, 1:] @ ys[:, 1:].T


def sq_dist_np(x, y, K):
    return 2.0 / K - 2.0 * inner_np(x, y)


def centroid_np(weights, values, K):
    """(w @ V) / (sqrt(-K) |Lorentz norm|), row-wise."""
    s = weights @ values
    inner = -s[:, 0] ** 2 + np.sum(s[:, 1:] ** 2, axis=1)
    return s / (np.sqrt(-K) * np.sqrt(np.abs(inner)))[:, None]


def residual_np(x, fx, K, w1=1.0, w2=1.0):
    combo = w1 * x + w2 * fx
    inner = -combo[:, 0] ** 2 + np.sum(combo[:, 1:] ** 2, axis=1)
    return combo / (np.sqrt(-K) * np.sqrt(np.abs(inner)))[:, None]


def hlt_np(x_rows, W, b, K, K_in=None):
    """Affine map plus lift; optional cross-curvature prefactor."""
    u = x_rows @ W + b
    out = lift_rows_np(u, K)
    if K_in is not None and K_in != K:
        out = out * np.sqrt(K / K_in)
    return out


def rmsnorm_np(x_rows, gain, K, eps=1e-8):
    s = x_rows[:, 1:]
    rms = np.sqrt(np.maximum(np.mean(s * s, axis=1, keepdims=True), eps * eps))
    return lift_rows_np(s / rms * gain, K)


def silu_np(x):
    return x / (1.0 + np.exp(-x))


def swiglu_np(x_rows, Wg, bg, Wu, bu, Wd, bd, K):
    gate = silu_np((x_rows @ Wg + bg))
    val = x_rows @ Wu + bu
    return hlt_np(lift_rows_np(gate * val, K), Wd, bd, K)


def rotary_angles_np(d, base=10000.0):
    return base ** (-2.0 * np.arange(d // 2) / d)


def rotate_rows_np(rows, positions, angles):
    """Blockwise 2-D rotation of space rows by position * angle."""
    rows = np.asarray(rows, dtype=np.float64)
    phase = np.asarray(positions, dtype=np.float64)[:, None] * angles[None, :]
    cos, sin = np.cos(phase), np.sin(phase)
    out = np.empty_like(rows)
    out[:, ::2] = rows[:, ::2] * cos - rows[:, 1::2] * sin
    out[:, 1::2] = rows[:, ::2] * sin + rows[:, 1::2] * cos
    return out


def softmax_np(scores, mask=None):
    if mask is not None:
        scores = np.where(mask, -np.inf, scores)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_oracle(x_rows, wq, bq, wk, bk, wv, bv, K, angles, causal=True):
    """One head of rotary-encoded Lorentzian attention, brute force."""
    t = x_rows.shape[0]
    pos = np.arange(t)
    q = hlt_np(x_rows, wq, bq, K)
    k = hlt_np(x_rows, wk, bk, K)
    v = hlt_np(x_rows, wv, bv, K)
    q = np.concatenate([q[:, :1], rotate_rows_np(q[:, 1:], pos, angles)], axis=1)
    k = np.concatenate([k[:, :1], rotate_rows_np(k[:, 1:], pos, angles)], axis=1)
    m = q.shape[1] - 1
    scores = -(2.0 / K - 2.0 * inner_rows_np(q, k)) / np.sqrt(m)
    mask = np.arange(t)[None, :] > np.arange(t)[:, None] if causal else None
    nu = softmax_np(scores, mask)
    return nu, centroid_np(nu, v, K)


def cross_entropy_np(logits, targets):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    return float(np.mean(logz - logits[np.arange(len(targets)), targets]))


def fd_grad(f, param, h=1e-5):
    """Central finite differences of scalar f() w.r.t. a Tensor's data."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a)
    b = np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
