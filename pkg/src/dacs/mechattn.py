"""Differentiable training-path attention for each mechanism.

These are the tape twins of the numpy functions in monotonic.py; the model's
decoder cross-attention is assembled from them. Halting masks and chunk
trigger decisions are hard thresholds, treated as constants of the backward
pass (they are piecewise constant in the parameters).
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_node
from .monotonic import dacs_keep_mask
from .streaming import MechanismConfig

Array = np.ndarray


def hma_alpha(P: Tensor, alpha_init: Array | None = None) -> Tensor:
    """Expected hard-monotonic weights for all output steps of one head.

    Custom op: the forward runs the division-free recurrence row by row
    (each row's previous-step weights are the row above), the backward is the
    hand-derived adjoint of that recurrence. Exact even when entries of P
    saturate at 1.
    """
    p = P.value
    L, T = p.shape
    a0 = np.zeros(T) if alpha_init is None else np.asarray(alpha_init, dtype=np.float64)
    if alpha_init is None:
        a0[0] = 1.0
    s = np.empty((L, T))
    alpha = np.empty((L, T))
    aprev = a0
    for i in range(L):
        run = 0.0
        for j in range(T):
            if j:
                run *= 1.0 - p[i, j - 1]
            run += aprev[j]
            s[i, j] = run
        alpha[i] = p[i] * s[i]
        aprev = alpha[i]

    def bw(G: Array):
        dp = np.zeros((L, T))
        carry = np.zeros(T)  # dL/d(alpha row i) arriving from row i+1
        for i in range(L - 1, -1, -1):
            ga = G[i] + carry
            dp[i] += ga * s[i]
            gs = ga * p[i]
            gaprev = np.zeros(T)
            for j in range(T - 1, 0, -1):
                gaprev[j] += gs[j]
                gs[j - 1] += gs[j] * (1.0 - p[i, j - 1])
                dp[i, j - 1] -= gs[j] * s[i, j - 1]
            gaprev[0] += gs[0]
            carry = gaprev
        return (dp,)

    return make_node(alpha, (P,), bw)


def mocha_beta(alpha: Tensor, U: Tensor, w: int) -> Tensor:
    """Chunkwise induced distribution on the tape; window ends at the
    trigger point and is clipped at the sequence start."""
    if w < 1:
        raise ValueError("chunk window must be >= 1")
    # Row-max shift cancels exactly between numerator and denominator, so it
    # is safe to treat as a constant of the tape.
    m = U.value.max(axis=-1, keepdims=True)
    eu = ad.exp(U - m)
    cs = ad.cumsum(eu)
    denom = cs - ad.shift(cs, w, 0.0)
    ratio = alpha / denom
    rcs = ad.flip(ad.cumsum(ad.flip(ratio)))
    window_sum = rcs - ad.shift(rcs, -w, 0.0)
    return eu * window_sum


def smocha_alpha(P: Tensor) -> Tensor:
    return P * ad.exclusive_cumprod(1.0 - P)


def dacs_weights(P: Tensor) -> Tensor:
    return P * dacs_keep_mask(P.value)


def train_weights(mech: MechanismConfig, E: Tensor) -> Tensor:
    """Full-sequence attention weights for one head given raw energies E.

    The maximum look-ahead never applies here; it is an inference-only cap.
    """
    P = ad.sigmoid(E)
    if mech.kind == "dacs":
        return dacs_weights(P)
    if mech.kind == "hma":
        return hma_alpha(P)
    if mech.kind == "mocha":
        return mocha_beta(hma_alpha(P), E, mech.window)
    if mech.kind in ("smocha", "mta"):
        return smocha_alpha(P)
    raise ValueError(f"unknown mechanism kind: {mech.kind}")


def cross_attention_train(
    x_norm: Tensor,
    enc: Tensor,
    wq: list[Tensor],
    wk: list[Tensor],
    wv: list[Tensor],
    wo: Tensor,
    mech: MechanismConfig,
    capture: dict | None = None,
) -> Tensor:
    """Per-head mechanism weights -> contexts -> concat -> output projection.

    When ``capture`` is given, each head's weight matrix is stored under its
    head index (numpy copies, detached from the tape).
    """
    d_k = wq[0].shape[1]
    scale = 1.0 / np.sqrt(d_k)
    contexts = []
    for h in range(len(wq)):
        Q = x_norm @ wq[h]
        K = enc @ wk[h]
        V = enc @ wv[h]
        E = (Q @ K.T) * scale
        W = train_weights(mech, E)
        if capture is not None:
            capture[h] = W.value.copy()
        contexts.append(W @ V)
    return ad.concat(contexts, axis=1) @ wo
