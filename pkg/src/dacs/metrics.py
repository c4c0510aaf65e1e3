"""Inference-cost ratio, token error rate, latency statistics and the
attention/halting exports used for alignment analysis.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .streaming import StepLog, StepTrace

Array = np.ndarray

# float64 round-trips exactly through %.17g, so dumped matrices reload bit-exactly.
_FLOAT_FMT = "%.17g"


@dataclass
class CostReport:
    """Computation-cost ratio: fraction of encoder positions actually
    inspected relative to full attention over all heads, layers and steps."""

    r: float
    total_steps: int
    n_layers: int
    n_heads: int
    n_output_steps: int
    T: int
    per_layer_head_mean: dict[tuple[int, int], float] = field(default_factory=dict)

    def consistent(self, tol: float = 1e-12) -> bool:
        denom = self.n_layers * self.n_heads * self.n_output_steps * self.T
        return abs(self.r - self.total_steps / denom) <= tol


def cost_ratio(log: StepLog, T: int) -> CostReport:
    """r = sum of s[h][l][i] over heads/layers/steps divided by
    (N_d * H * L) * T."""
    if not log.entries:
        raise ValueError("empty step log")
    if T < 1:
        raise ValueError("T must be >= 1")
    n_layers, n_heads, L = log.n_layers(), log.n_heads(), log.n_output_steps()
    total = log.total_steps()
    sums: dict[tuple[int, int], float] = {}
    counts: dict[tuple[int, int], int] = {}
    for _, l, h, s in log.entries:
        sums[(l, h)] = sums.get((l, h), 0.0) + s
        counts[(l, h)] = counts.get((l, h), 0) + 1
    means = {k: sums[k] / counts[k] for k in sums}
    return CostReport(r=total / (n_layers * n_heads * L * T), total_steps=total,
                      n_layers=n_layers, n_heads=n_heads, n_output_steps=L,
                      T=T, per_layer_head_mean=means)


def cost_ratio_set(logs_and_T: list[tuple[StepLog, int]]) -> tuple[float, list[CostReport]]:
    """Unweighted mean of per-utterance ratios, the set-level figure."""
    reports = [cost_ratio(log, T) for log, T in logs_and_T]
    return float(np.mean([rep.r for rep in reports])), reports


class EditStats(NamedTuple):
    rate: float
    subs: int
    dels: int
    ins: int


def token_error_rate(hyp, ref) -> EditStats:
    """Levenshtein alignment; rate = (S + D + I) / len(ref)."""
    hyp = list(hyp)
    ref = list(ref)
    if not ref:
        raise ValueError("empty reference")
    n, m = len(ref), len(hyp)
    # dp[i][j]: (cost, subs, dels, ins) aligning ref[:i] with hyp[:j]
    dp = [[(0, 0, 0, 0)] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = (i, 0, i, 0)
    for j in range(1, m + 1):
        dp[0][j] = (j, 0, 0, j)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            c, s, d, ins = dp[i - 1][j - 1]
            if ref[i - 1] != hyp[j - 1]:
                c, s = c + 1, s + 1
            best = (c, s, d, ins)
            c2 = dp[i - 1][j]
            if c2[0] + 1 < best[0]:
                best = (c2[0] + 1, c2[1], c2[2] + 1, c2[3])
            c3 = dp[i][j - 1]
            if c3[0] + 1 < best[0]:
                best = (c3[0] + 1, c3[1], c3[2], c3[3] + 1)
            dp[i][j] = best
    cost, s, d, ins = dp[n][m]
    return EditStats(rate=cost / n, subs=s, dels=d, ins=ins)


@dataclass
class LatencyReport:
    """Per-step emission frames and, when the true alignment is known, the
    lag between each halting position and its token's end frame (both in
    encoder frames). The chunk encoder adds n_r frames on top."""

    t_per_step: list[int]
    mean_lag: float
    max_lag: float
    encoder_context_frames: int

    def monotone(self) -> bool:
        return all(a <= b for a, b in zip(self.t_per_step, self.t_per_step[1:]))


def latency_report(trace: list[StepTrace], alignment: list[tuple[int, int]] | None,
                   stride: int, n_r: int) -> LatencyReport:
    t_seq = [rec.t_sync for rec in trace]
    lags = []
    if alignment:
        for rec, (_, end_raw) in zip(trace, alignment):
            end_enc = -(-end_raw // stride)  # raw frame span -> encoder frame count
            lags.append(rec.t_sync - end_enc)
    return LatencyReport(
        t_per_step=t_seq,
        mean_lag=float(np.mean(lags)) if lags else float("nan"),
        max_lag=float(np.max(lags)) if lags else float("nan"),
        encoder_context_frames=n_r,
    )


def attention_dump(trace: list[StepTrace], out_dir, meta: dict | None = None) -> Path:
    """Write per-head weight matrices (one CSV per layer/head), halting
    positions, and a manifest. Values print with %.17g and therefore reload
    bit-exactly."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not trace:
        raise ValueError("empty trace")
    if trace[0].weights is None:
        raise ValueError("trace was collected without attention weights")
    pairs = sorted(trace[0].weights)
    files = []
    for (l, h) in pairs:
        mat = np.stack([rec.weights[(l, h)] for rec in trace])
        name = f"weights_l{l}_h{h}.csv"
        np.savetxt(out / name, mat, fmt=_FLOAT_FMT, delimiter=",")
        files.append(name)
    with (out / "halts.csv").open("w") as fh:
        cols = ",".join(f"l{l}.h{h}" for l, h in pairs)
        fh.write(f"step,t_entry,{cols},t_sync,token\n")
        for rec in trace:
            halts = ",".join(str(rec.halts[p]) for p in pairs)
            fh.write(f"{rec.step},{rec.t_entry},{halts},{rec.t_sync},{rec.token}\n")
    manifest = {
        "files": files,
        "halts": "halts.csv",
        "layer_heads": [[l, h] for l, h in pairs],
        "n_steps": len(trace),
        "T": int(trace[0].weights[pairs[0]].size),
        "float_format": _FLOAT_FMT,
    }
    if meta:
        manifest["meta"] = meta
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def attention_load(dump_dir) -> dict[tuple[int, int], Array]:
    """Reload dumped weight matrices keyed by (layer, head)."""
    dump = Path(dump_dir)
    manifest = json.loads((dump / "manifest.json").read_text())
    out = {}
    for (l, h), name in zip(manifest["layer_heads"], manifest["files"]):
        mat = np.loadtxt(dump / name, delimiter=",", ndmin=2)
        out[(int(l), int(h))] = mat
    return out
