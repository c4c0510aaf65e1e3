"""Dataset-level evaluation: decode every utterance, score token errors,
aggregate cost ratios and latency. Utterances are independent, so the work
optionally fans out over a thread pool; results always come back in input
order, so any thread count reproduces the single-threaded output.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decoding import DecodeResult, decode_utterance
from .metrics import EditStats, cost_ratio, latency_report, token_error_rate
from .model import Model
from .streaming import MechanismConfig
from .toytask import Utterance


@dataclass
class UtteranceEval:
    index: int
    tokens: list[int]
    ref: list[int]
    edits: EditStats
    r: float
    T_enc: int
    mean_lag: float
    max_lag: float
    truncated: bool
    result: DecodeResult


@dataclass
class EvalSummary:
    per_utt: list[UtteranceEval] = field(default_factory=list)

    @property
    def ter(self) -> float:
        """Pooled token error rate: total edits over total reference length."""
        edits = sum(u.edits.subs + u.edits.dels + u.edits.ins for u in self.per_utt)
        ref_len = sum(len(u.ref) for u in self.per_utt)
        return edits / ref_len

    @property
    def mean_r(self) -> float:
        return float(np.mean([u.r for u in self.per_utt]))

    @property
    def mean_lag(self) -> float:
        lags = [u.mean_lag for u in self.per_utt if not math.isnan(u.mean_lag)]
        return float(np.mean(lags)) if lags else float("nan")

    @property
    def max_lag(self) -> float:
        lags = [u.max_lag for u in self.per_utt if not math.isnan(u.max_lag)]
        return float(np.max(lags)) if lags else float("nan")

    @property
    def n_truncated(self) -> int:
        return sum(u.truncated for u in self.per_utt)

    def to_dict(self) -> dict:
        return {"ter": self.ter, "mean_r": self.mean_r, "mean_lag": self.mean_lag,
                "max_lag": self.max_lag, "n_utterances": len(self.per_utt),
                "n_truncated": self.n_truncated}


def evaluate_dataset(model: Model, utts: list[Utterance],
                     mech: MechanismConfig | None = None, max_len: int = 24,
                     beam: int = 1, threads: int = 1,
                     collect_weights: bool = False) -> EvalSummary:
    cfg = model.config

    def one(pair) -> UtteranceEval:
        i, utt = pair
        enc = model.encode(utt.features)
        res = decode_utterance(model, enc, mech=mech, max_len=max_len, beam=beam,
                               collect_weights=collect_weights)
        edits = token_error_rate(res.tokens, utt.tokens)
        rep = cost_ratio(res.step_log, enc.shape[0])
        lat = latency_report(res.trace, utt.alignment, cfg.stride, cfg.chunk.n_r)
        return UtteranceEval(index=i, tokens=res.tokens, ref=utt.tokens,
                             edits=edits, r=rep.r, T_enc=enc.shape[0],
                             mean_lag=lat.mean_lag, max_lag=lat.max_lag,
                             truncated=res.truncated, result=res)

    pairs = list(enumerate(utts))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_utt = list(pool.map(one, pairs))
    else:
        per_utt = [one(p) for p in pairs]
    return EvalSummary(per_utt=per_utt)
