"""Attention primitives shared by every mechanism.

Pure float64 numpy functions: scaled-dot energies, the halting sigmoid,
masked softmax attention and the multi-head wrapper. Masking is additive
-inf energy before normalisation, never post-hoc zeroing, so weight rows
stay normalised.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import stable_sigmoid

Array = np.ndarray


class FullyMaskedRowError(ValueError):
    """An attention row had no permitted key position."""


def _finite(name: str, a: Array) -> Array:
    a = np.asarray(a, dtype=np.float64)
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def energy(q: Array, k: Array, d_k: int | None = None) -> float:
    """Scaled dot-product energy between one query and one key.

    No bias, weight-norm or noise terms: e = q.k / sqrt(d_k).
    """
    q = _finite("q", q)
    k = _finite("k", k)
    if q.ndim != 1 or k.ndim != 1 or q.shape != k.shape or q.size < 1:
        raise ValueError(f"energy: need equal-length 1-D vectors, got {q.shape} and {k.shape}")
    if d_k is None:
        d_k = q.size
    elif d_k != q.size:
        raise ValueError(f"energy: d_k={d_k} does not match vector length {q.size}")
    return float(q @ k / np.sqrt(d_k))


def halting_prob(e):
    """Numerically stable sigmoid; scalar in -> float, array in -> array."""
    arr = _finite("e", np.asarray(e, dtype=np.float64))
    out = stable_sigmoid(arr)
    return float(out) if out.ndim == 0 else out


def softmax_rows(e: Array) -> Array:
    """Row softmax that tolerates -inf entries (fully -inf rows are a bug)."""
    m = e.max(axis=-1, keepdims=True)
    z = np.exp(e - m)
    z[~np.isfinite(e)] = 0.0
    return z / z.sum(axis=-1, keepdims=True)


def scaled_dot_attention(
    Q: Array, K: Array, V: Array, mask: Array | None = None
) -> tuple[Array, Array]:
    """softmax(Q K^T / sqrt(d_k)) V with optional {0,1} permission mask.

    Returns (output, weights). Every weight row sums to 1; a fully masked
    row raises FullyMaskedRowError rather than silently going uniform.
    """
    Q = _finite("Q", Q)
    K = _finite("K", K)
    V = _finite("V", V)
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ValueError("scaled_dot_attention expects 2-D matrices")
    if Q.shape[1] != K.shape[1]:
        raise ValueError(f"query width {Q.shape[1]} != key width {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise ValueError(f"key count {K.shape[0]} != value count {V.shape[0]}")
    e = Q @ K.T / np.sqrt(Q.shape[1])
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != e.shape:
            raise ValueError(f"mask shape {mask.shape} != energy shape {e.shape}")
        permitted = mask != 0
        if not permitted.any(axis=-1).all():
            raise FullyMaskedRowError("attention row with no permitted position")
        e = np.where(permitted, e, -np.inf)
    w = softmax_rows(e)
    return w @ V, w


@dataclass
class HeadProjection:
    """Per-head projection parameters for multi-head attention.

    wq/wk/wv hold one (d_model x d_k) matrix per head; wo is the
    (d_model x d_model) output combination applied after concatenation.
    """

    wq: list[Array]
    wk: list[Array]
    wv: list[Array]
    wo: Array
    d_k: int = field(init=False)

    def __post_init__(self):
        h = len(self.wq)
        if h < 1 or len(self.wk) != h or len(self.wv) != h:
            raise ValueError("wq/wk/wv must hold one matrix per head")
        d_m, d_k = self.wq[0].shape
        if d_m != h * d_k:
            raise ValueError(f"d_model={d_m} must equal heads*d_k={h * d_k}")
        for mats in (self.wq, self.wk, self.wv):
            for w in mats:
                _finite("projection", w)
                if w.shape != (d_m, d_k):
                    raise ValueError("inconsistent per-head projection shape")
        _finite("wo", self.wo)
        if self.wo.shape != (d_m, d_m):
            raise ValueError("wo must be d_model x d_model")
        self.d_k = d_k

    @property
    def heads(self) -> int:
        return len(self.wq)

    @property
    def d_model(self) -> int:
        return self.wo.shape[0]

    @classmethod
    def identity(cls, d_model: int) -> "HeadProjection":
        eye = np.eye(d_model)
        return cls(wq=[eye.copy()], wk=[eye.copy()], wv=[eye.copy()], wo=eye.copy())


def multi_head(
    Q: Array, K: Array, V: Array, proj: HeadProjection, mask: Array | None = None
) -> Array:
    """Concat(head_1..head_H) Wo with scaled-dot attention inside each head."""
    Q = _finite("Q", Q)
    K = _finite("K", K)
    V = _finite("V", V)
    if Q.shape[1] != proj.d_model or K.shape[1] != proj.d_model or V.shape[1] != proj.d_model:
        raise ValueError("multi_head: operand width must equal d_model")
    heads = []
    for h in range(proj.heads):
        out, _ = scaled_dot_attention(Q @ proj.wq[h], K @ proj.wk[h], V @ proj.wv[h], mask)
        heads.append(out)
    return np.concatenate(heads, axis=1) @ proj.wo
