"""Step-wise online attention: the adaptive-computation scan with maximum
look-ahead and head synchronization, plus the streaming decision rules of the
four baseline monotonic mechanisms.

Halting positions are counts: t = n means the first n encoder frames are
committed, t starts at 0. Array index of position j is j-1.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import stable_sigmoid
from .monotonic import exclusive_cumprod

Array = np.ndarray

MECHANISMS = ("dacs", "hma", "mocha", "smocha", "mta")


@dataclass(frozen=True)
class MechanismConfig:
    """Tagged mechanism choice.

    max_lookahead caps the adaptive scan (dacs only, math.inf allowed and the
    default); window is the chunk width of the two-pass mechanisms.
    """

    kind: str
    max_lookahead: float = math.inf
    window: int = 1

    def __post_init__(self):
        if self.kind not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {MECHANISMS}, got {self.kind!r}")
        if self.kind == "dacs":
            m = self.max_lookahead
            if not (m == math.inf or (float(m).is_integer() and m >= 1)):
                raise ValueError("max_lookahead must be an integer >= 1 or inf")
        if self.kind in ("mocha", "smocha") and self.window < 1:
            raise ValueError("chunk window must be >= 1")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "dacs":
            d["max_lookahead"] = "inf" if self.max_lookahead == math.inf else int(self.max_lookahead)
        if self.kind in ("mocha", "smocha"):
            d["window"] = self.window
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MechanismConfig":
        kind = d.get("kind")
        m = d.get("max_lookahead", math.inf)
        if m in ("inf", None):
            m = math.inf
        return cls(kind=kind, max_lookahead=float(m), window=int(d.get("window", 1)))


def _probe(q: Array, K: Array) -> Array:
    """Halting probabilities of q against the given key rows."""
    if K.shape[0] == 0:
        return np.zeros(0)
    return stable_sigmoid(K @ q / np.sqrt(q.shape[0]))


def dacs_head_scan(
    q: Array, K: Array, V: Array, t_prev: int, max_lookahead: float = math.inf
) -> tuple[Array, int, int]:
    """Adaptive-computation scan for one head at one output step.

    Scans positions 1..min(t_prev+M, T) from the utterance start, accumulating
    sigmoid halting probabilities, and halts at the first position where the
    running sum strictly exceeds 1 (else at the bound). Returns the context
    sum(p_m * v_m) over the inspected prefix, the halting position and the
    number of computation steps (both equal to the prefix length).
    """
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    T = K.shape[0]
    if T == 0:
        raise ValueError("dacs_head_scan: empty encoder states")
    if not 0 <= t_prev <= T:
        raise ValueError(f"t_prev={t_prev} outside [0, {T}]")
    bound = T if max_lookahead == math.inf else min(t_prev + int(max_lookahead), T)
    bound = max(bound, 1)
    p = _probe(np.asarray(q, dtype=np.float64), K[:bound])
    acc = np.cumsum(p)
    crossed = np.nonzero(acc > 1.0)[0]
    halt = int(crossed[0]) + 1 if crossed.size else bound
    weights = np.zeros(T)
    weights[:halt] = p[:halt]
    return weights @ V, halt, halt


def sync_step(halts, t_prev: int) -> int:
    """Unified halting position: the furthest point reached by any head,
    never behind the previous step."""
    halts = list(halts)
    if not halts:
        raise ValueError("sync_step needs at least one head result")
    return max(t_prev, *halts)


def hma_step(q: Array, K: Array, V: Array, t_prev: int) -> tuple[Array, int, int, Array]:
    """Hard monotonic step: first p > 0.5 at or after t_prev+1 selects its
    value row; no trigger by T falls back to a zero context at T.

    Returns (context, halt_pos, steps_inspected, full-length weight row).
    """
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    T = K.shape[0]
    if not 0 <= t_prev <= T:
        raise ValueError(f"t_prev={t_prev} outside [0, {T}]")
    weights = np.zeros(T)
    p = _probe(np.asarray(q, dtype=np.float64), K[t_prev:])
    hits = np.nonzero(p > 0.5)[0]
    if hits.size:
        j = t_prev + int(hits[0]) + 1
        weights[j - 1] = 1.0
        return V[j - 1].copy(), j, j - t_prev, weights
    return np.zeros(V.shape[1]), T, T - t_prev, weights


def mocha_step(
    q: Array, K: Array, V: Array, t_prev: int, w: int
) -> tuple[Array, int, int, Array]:
    """Two-pass chunkwise step: hard trigger, then softmax over the w-frame
    window ending at the trigger (clipped at the sequence start).

    Steps count both passes. No trigger inherits the hard-attention fallback.
    """
    if w < 1:
        raise ValueError("chunk window must be >= 1")
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    T = K.shape[0]
    c, j, first_pass, weights = hma_step(q, K, V, t_prev)
    if not weights.any():  # no trigger
        return c, j, first_pass, weights
    lo = max(0, j - w)
    u = np.asarray(K[lo:j] @ q / np.sqrt(q.shape[0]), dtype=np.float64)
    soft = np.exp(u - u.max())
    soft /= soft.sum()
    weights = np.zeros(T)
    weights[lo:j] = soft
    return soft @ V[lo:j], j, first_pass + (j - lo), weights


def mta_step(q: Array, K: Array, V: Array, t_prev: int) -> tuple[Array, int, int, Array]:
    """Truncated step: first p > 0.5 after t_prev sets the truncation point
    (fallback T); weights cover the whole prefix through it via the
    sigmoid-product form. Steps count the full prefix."""
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    T = K.shape[0]
    if not 0 <= t_prev <= T:
        raise ValueError(f"t_prev={t_prev} outside [0, {T}]")
    tail = _probe(q, K[t_prev:])
    hits = np.nonzero(tail > 0.5)[0]
    j = t_prev + int(hits[0]) + 1 if hits.size else T
    head = _probe(q, K[:t_prev])
    p = np.concatenate([head, tail[: j - t_prev]])
    w = p * exclusive_cumprod(1.0 - p)
    weights = np.zeros(T)
    weights[:j] = w
    return w @ V[:j], j, j, weights


@dataclass
class StepLog:
    """Computation-step counts s[h][l][i], one record per head/layer/step."""

    entries: list[tuple[int, int, int, int]] = field(default_factory=list)
    # each entry: (step, layer, head, steps)

    def add(self, step: int, layer: int, head: int, steps: int) -> None:
        self.entries.append((step, layer, head, int(steps)))

    def total_steps(self) -> int:
        return sum(e[3] for e in self.entries)

    def n_output_steps(self) -> int:
        return 1 + max(e[0] for e in self.entries) if self.entries else 0

    def n_layers(self) -> int:
        return 1 + max(e[1] for e in self.entries) if self.entries else 0

    def n_heads(self) -> int:
        return 1 + max(e[2] for e in self.entries) if self.entries else 0

    @classmethod
    def full_attention(cls, n_steps: int, n_layers: int, n_heads: int, T: int) -> "StepLog":
        """The offline baseline: every head scans all T frames every step."""
        log = cls()
        for i in range(n_steps):
            for l in range(n_layers):
                for h in range(n_heads):
                    log.add(i, l, h, T)
        return log


@dataclass
class StepTrace:
    """Per-output-step halting record."""

    step: int
    t_entry: int                       # synchronized position entering the step
    halts: dict[tuple[int, int], int]  # (layer, head) -> halt position
    steps: dict[tuple[int, int], int]  # (layer, head) -> computation steps
    t_sync: int                        # synchronized position leaving the step
    token: int
    weights: dict[tuple[int, int], Array] | None = None

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "t_entry": self.t_entry,
            "halts": {f"l{l}.h{h}": v for (l, h), v in sorted(self.halts.items())},
            "steps": {f"l{l}.h{h}": v for (l, h), v in sorted(self.steps.items())},
            "t_sync": self.t_sync,
            "token": self.token,
        }


def write_trace(path, trace: list[StepTrace]) -> None:
    """Line-delimited trace export: one JSON object per output step."""
    with Path(path).open("w") as fh:
        for rec in trace:
            fh.write(json.dumps(rec.to_json_dict()) + "\n")


def read_trace(path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]
