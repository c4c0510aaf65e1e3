"""Training-mode (full-sequence) attention weights for the five mechanisms.

Everything here is plain numpy on float64. The differentiable twins used by
the model's training path live in mechattn.py; tests pin the two paths to
each other. Positions are 1-based in the math and 0-based in the arrays.
"""
from __future__ import annotations

import numpy as np

from .autodiff import stable_sigmoid

Array = np.ndarray


def _as2d(P) -> Array:
    P = np.asarray(P, dtype=np.float64)
    return P[None, :] if P.ndim == 1 else P


def exclusive_cumprod(x: Array) -> Array:
    """[x0, x1, x2] -> [1, x0, x0*x1] along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    out = np.ones_like(x)
    out[..., 1:] = np.cumprod(x[..., :-1], axis=-1)
    return out


def hma_expected_weights(p: Array, alpha_prev: Array) -> Array:
    """One output step of the hard-monotonic-attention expectation.

    alpha[j] = p[j] * sum_{m<=j} alpha_prev[m] * prod_{l=m..j-1}(1-p[l]),
    evaluated with the O(T) recurrence s[j] = s[j-1]*(1-p[j-1]) + alpha_prev[j].
    The division-free form stays exact when some p hit 1.0.
    """
    p = np.asarray(p, dtype=np.float64)
    alpha_prev = np.asarray(alpha_prev, dtype=np.float64)
    if p.shape != alpha_prev.shape or p.ndim != 1:
        raise ValueError("p and alpha_prev must be equal-length vectors")
    if (alpha_prev < 0).any():
        raise ValueError("alpha_prev entries must be non-negative")
    s = np.empty_like(p)
    run = 0.0
    for j in range(p.size):
        run = run * (1.0 - p[j - 1]) if j else 0.0
        run += alpha_prev[j]
        s[j] = run
    return p * s


def hma_expected_matrix(P: Array, alpha_init: Array | None = None) -> Array:
    """Stack hma_expected_weights over output steps, one-hot initial state."""
    P = _as2d(P)
    alpha = np.zeros(P.shape[1]) if alpha_init is None else np.asarray(alpha_init, dtype=np.float64)
    if alpha_init is None:
        alpha[0] = 1.0
    out = np.empty_like(P)
    for i in range(P.shape[0]):
        alpha = hma_expected_weights(P[i], alpha)
        out[i] = alpha
    return out


def mocha_expected_weights(alpha: Array, U: Array, w: int) -> Array:
    """Induced chunkwise soft-attention distribution.

    beta[i,j] = sum_{k=j}^{j+w-1} alpha[i,k] * exp(u[i,j]) / D[i,k] with
    D[i,k] = sum_{l=k-w+1}^{k} exp(u[i,l]); window indices outside the
    sequence are dropped from numerator and denominator alike. Conserves the
    per-row mass of alpha.
    """
    if w < 1:
        raise ValueError("chunk window must be >= 1")
    alpha = _as2d(alpha)
    U = _as2d(U)
    if alpha.shape != U.shape:
        raise ValueError("alpha and U must have identical shape")
    eu = np.exp(U - U.max(axis=-1, keepdims=True))
    cs = np.cumsum(eu, axis=-1)
    denom = cs.copy()
    if w <= cs.shape[1]:
        denom[:, w:] -= cs[:, :-w]
    ratio = alpha / denom
    rcs = np.flip(np.cumsum(np.flip(ratio, -1), axis=-1), -1)
    window_sum = rcs.copy()
    if w <= rcs.shape[1]:
        window_sum[:, :-w] -= rcs[:, w:]
    return eu * window_sum


def smocha_weights(P: Array) -> Array:
    """alpha[i,j] = p[i,j] * prod_{l<j}(1 - p[i,l]); no cross-step recursion."""
    P = _as2d(P)
    return P * exclusive_cumprod(1.0 - P)


def mta_weights(P: Array) -> Array:
    """Same computation as smocha_weights; the inference pairing differs."""
    return smocha_weights(P)


def dacs_keep_mask(P: Array) -> Array:
    """{0,1} mask keeping each row's prefix up to and including the first
    position where the running sum of p strictly exceeds 1."""
    P = _as2d(P)
    exceeded = np.cumsum(P, axis=-1) > 1.0
    shifted = np.zeros_like(exceeded)
    shifted[:, 1:] = exceeded[:, :-1]
    return (~shifted).astype(np.float64)


def dacs_train_weights(P: Array) -> Array:
    """Truncated halting probabilities: P with everything past each row's
    halting position zeroed. Probabilities are not renormalised."""
    P = _as2d(P)
    return P * dacs_keep_mask(P)


def context_from_weights(W: Array, V: Array) -> Array:
    """c[i] = sum_j W[i,j] V[j]."""
    W = _as2d(W)
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or W.shape[1] != V.shape[0]:
        raise ValueError(f"weights {W.shape} do not match values {V.shape}")
    return W @ V


def halting_matrix(Q: Array, K: Array) -> Array:
    """P = sigmoid(Q K^T / sqrt(d_k)) for the full sequence pair."""
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    return stable_sigmoid(Q @ K.T / np.sqrt(Q.shape[1]))
