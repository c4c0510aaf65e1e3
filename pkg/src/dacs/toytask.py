"""Synthetic monotone speech-like task.

Each content token owns a fixed random feature template; an utterance emits
its tokens left to right, each lasting a few frames, plus optional Gaussian
noise. Ground-truth frame spans are kept so halting positions can be audited
against the true alignment.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import EOS, N_RESERVED, PAD, SOS  # noqa: F401  (re-exported ids)

Array = np.ndarray


@dataclass(frozen=True)
class ToyTaskConfig:
    vocab_size: int = 12          # includes pad/sos/eos
    d_feat: int = 8
    d_min: int = 2                # frames per token, inclusive range
    d_max: int = 4
    sigma: float = 0.0            # template noise level
    min_tokens: int = 3
    max_tokens: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < N_RESERVED + 1:
            raise ValueError("vocab_size must exceed the reserved ids (pad/sos/eos)")
        if not 1 <= self.d_min <= self.d_max:
            raise ValueError("need 1 <= d_min <= d_max")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")

    @property
    def content_tokens(self) -> list[int]:
        return list(range(N_RESERVED, self.vocab_size))

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "d_feat": self.d_feat,
                "d_min": self.d_min, "d_max": self.d_max, "sigma": self.sigma,
                "min_tokens": self.min_tokens, "max_tokens": self.max_tokens,
                "seed": self.seed}


@dataclass
class Utterance:
    features: Array                       # T_raw x d_feat
    tokens: list[int]                     # content ids, no sos/eos
    alignment: list[tuple[int, int]] = field(default_factory=list)
    # per token: (start_frame, end_frame) in raw frames, end exclusive


def class_templates(cfg: ToyTaskConfig) -> Array:
    """One fixed random template per content token, shared by every split."""
    rng = np.random.default_rng(cfg.seed)
    return rng.normal(0.0, 1.0, size=(len(cfg.content_tokens), cfg.d_feat))


def gen_toy_dataset(cfg: ToyTaskConfig, n: int, split_seed: int = 0) -> list[Utterance]:
    """Generate n utterances. Templates depend only on cfg.seed; the utterance
    stream depends on (cfg.seed, split_seed), so splits differ but share the
    task. Bit-reproducible for identical arguments."""
    if n < 1:
        raise ValueError("n must be >= 1")
    templates = class_templates(cfg)
    rng = np.random.default_rng([cfg.seed, split_seed])
    content = np.asarray(cfg.content_tokens)
    utts = []
    for _ in range(n):
        k = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
        tokens = rng.choice(content, size=k).tolist()
        durations = rng.integers(cfg.d_min, cfg.d_max + 1, size=k)
        frames = []
        alignment = []
        cursor = 0
        for tok, d in zip(tokens, durations):
            block = np.repeat(templates[tok - N_RESERVED][None, :], d, axis=0)
            if cfg.sigma > 0:
                block = block + rng.normal(0.0, cfg.sigma, size=block.shape)
            frames.append(block)
            alignment.append((cursor, cursor + int(d)))
            cursor += int(d)
        utts.append(Utterance(features=np.vstack(frames),
                              tokens=[int(t) for t in tokens],
                              alignment=alignment))
    return utts


def save_dataset(path, utts: list[Utterance], cfg: ToyTaskConfig) -> None:
    """Binary cache: features, tokens and alignments per utterance plus the
    generating config."""
    payload: dict[str, Array] = {}
    for i, u in enumerate(utts):
        payload[f"feat_{i:06d}"] = u.features.astype("<f8")
        payload[f"tok_{i:06d}"] = np.asarray(u.tokens, dtype="<i8")
        payload[f"ali_{i:06d}"] = np.asarray(u.alignment, dtype="<i8").reshape(-1, 2)
    meta = json.dumps({"n": len(utts), "task": cfg.to_dict()})
    np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **payload)


def load_dataset(path) -> tuple[list[Utterance], ToyTaskConfig]:
    path = Path(path)
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        cfg = ToyTaskConfig(**meta["task"])
        utts = []
        for i in range(meta["n"]):
            ali = data[f"ali_{i:06d}"]
            utts.append(Utterance(
                features=np.asarray(data[f"feat_{i:06d}"], dtype=np.float64),
                tokens=[int(t) for t in data[f"tok_{i:06d}"]],
                alignment=[(int(a), int(b)) for a, b in ali],
            ))
    return utts, cfg
