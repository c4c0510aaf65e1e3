"""Declarative experiment configuration: strict JSON schema with unknown-key
rejection, shipped presets, and deterministic run manifests.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .model import ChunkLayout, ModelConfig
from .streaming import MechanismConfig
from .toytask import ToyTaskConfig
from .training import TrainConfig

VERSION = "0.1.0"


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass(frozen=True)
class DataSplits:
    n_train: int = 1000
    n_dev: int = 150
    n_test: int = 200

    def __post_init__(self):
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("data split sizes must be >= 1")


@dataclass(frozen=True)
class DecodeConfig:
    max_len: int = 24
    beam: int = 1

    def __post_init__(self):
        if self.max_len < 1 or self.beam < 1:
            raise ConfigError("decode.max_len and decode.beam must be >= 1")


@dataclass
class ExperimentConfig:
    seed: int = 0
    task: ToyTaskConfig = field(default_factory=ToyTaskConfig)
    data: DataSplits = field(default_factory=DataSplits)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    mechanisms: list[MechanismConfig] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "task": self.task.to_dict(),
            "data": {"n_train": self.data.n_train, "n_dev": self.data.n_dev,
                     "n_test": self.data.n_test},
            "model": {k: v for k, v in self.model.to_dict().items()
                      if k not in ("vocab_size", "d_feat")},
            "train": self.train.to_dict(),
            "decode": {"max_len": self.decode.max_len, "beam": self.decode.beam},
        }
        if self.mechanisms:
            d["mechanisms"] = [m.to_dict() for m in self.mechanisms]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _require_keys(section: dict, allowed: set[str], path: str) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}.{key}'" if path else f"unknown key '{key}'")


def _typed(section: dict, key: str, kind, default, path: str):
    if key not in section:
        if default is _REQUIRED:
            raise ConfigError(f"missing required key '{path}.{key}'")
        return default
    val = section[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if kind is not None and (not isinstance(val, kind) or isinstance(val, bool) and kind is not bool):
        raise ConfigError(f"'{path}.{key}' must be {getattr(kind, '__name__', kind)}")
    return val


_REQUIRED = object()


def _parse_mechanism(d: dict, path: str) -> MechanismConfig:
    _require_keys(d, {"kind", "max_lookahead", "window"}, path)
    kind = _typed(d, "kind", str, _REQUIRED, path)
    m = d.get("max_lookahead", "inf")
    if m == "inf":
        m = math.inf
    elif not isinstance(m, int) or isinstance(m, bool):
        raise ConfigError(f"'{path}.max_lookahead' must be an integer or \"inf\"")
    window = _typed(d, "window", int, 1, path)
    try:
        return MechanismConfig(kind=kind, max_lookahead=m, window=window)
    except ValueError as exc:
        raise ConfigError(f"'{path}': {exc}") from exc


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("top-level config must be an object")
    _require_keys(raw, {"seed", "task", "data", "model", "train", "decode", "mechanisms"}, "")
    seed = _typed(raw, "seed", int, 0, "")

    t = raw.get("task", {})
    _require_keys(t, {"vocab_size", "d_feat", "d_min", "d_max", "sigma",
                      "min_tokens", "max_tokens", "seed"}, "task")
    try:
        task = ToyTaskConfig(
            vocab_size=_typed(t, "vocab_size", int, 12, "task"),
            d_feat=_typed(t, "d_feat", int, 8, "task"),
            d_min=_typed(t, "d_min", int, 2, "task"),
            d_max=_typed(t, "d_max", int, 4, "task"),
            sigma=_typed(t, "sigma", float, 0.0, "task"),
            min_tokens=_typed(t, "min_tokens", int, 3, "task"),
            max_tokens=_typed(t, "max_tokens", int, 8, "task"),
            seed=_typed(t, "seed", int, seed, "task"),
        )
    except ValueError as exc:
        raise ConfigError(f"task: {exc}") from exc

    d = raw.get("data", {})
    _require_keys(d, {"n_train", "n_dev", "n_test"}, "data")
    data = DataSplits(n_train=_typed(d, "n_train", int, 1000, "data"),
                      n_dev=_typed(d, "n_dev", int, 150, "data"),
                      n_test=_typed(d, "n_test", int, 200, "data"))

    m = raw.get("model", {})
    _require_keys(m, {"enc_layers", "dec_layers", "heads", "d_model", "d_ff",
                      "stride", "frontend_average", "chunk", "mechanism"}, "model")
    chunk_d = m.get("chunk", {})
    _require_keys(chunk_d, {"n_c", "n_l", "n_r"}, "model.chunk")
    try:
        chunk = ChunkLayout(n_c=_typed(chunk_d, "n_c", int, 8, "model.chunk"),
                            n_l=_typed(chunk_d, "n_l", int, 8, "model.chunk"),
                            n_r=_typed(chunk_d, "n_r", int, 8, "model.chunk"))
        mechanism = _parse_mechanism(m.get("mechanism", {"kind": "dacs"}), "model.mechanism")
        model = ModelConfig(
            enc_layers=_typed(m, "enc_layers", int, 2, "model"),
            dec_layers=_typed(m, "dec_layers", int, 2, "model"),
            heads=_typed(m, "heads", int, 2, "model"),
            d_model=_typed(m, "d_model", int, 32, "model"),
            d_ff=_typed(m, "d_ff", int, 64, "model"),
            stride=_typed(m, "stride", int, 4, "model"),
            frontend_average=_typed(m, "frontend_average", bool, True, "model"),
            vocab_size=task.vocab_size,
            d_feat=task.d_feat,
            chunk=chunk,
            mechanism=mechanism,
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc

    tr = raw.get("train", {})
    _require_keys(tr, {"epochs", "batch_size", "label_smoothing", "noam_scale",
                       "warmup", "clip_norm", "patience", "seed"}, "train")
    try:
        train = TrainConfig(
            epochs=_typed(tr, "epochs", int, 10, "train"),
            batch_size=_typed(tr, "batch_size", int, 16, "train"),
            label_smoothing=_typed(tr, "label_smoothing", float, 0.1, "train"),
            noam_scale=_typed(tr, "noam_scale", float, 2.0, "train"),
            warmup=_typed(tr, "warmup", int, 300, "train"),
            clip_norm=_typed(tr, "clip_norm", float, 5.0, "train"),
            patience=_typed(tr, "patience", int, 3, "train"),
            seed=_typed(tr, "seed", int, seed, "train"),
        )
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc

    dc = raw.get("decode", {})
    _require_keys(dc, {"max_len", "beam"}, "decode")
    decode = DecodeConfig(max_len=_typed(dc, "max_len", int, 24, "decode"),
                          beam=_typed(dc, "beam", int, 1, "decode"))

    mechs = [_parse_mechanism(x, f"mechanisms[{i}]")
             for i, x in enumerate(raw.get("mechanisms", []))]
    return ExperimentConfig(seed=seed, task=task, data=data, model=model,
                            train=train, decode=decode, mechanisms=mechs)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)


def config_sha256(config: ExperimentConfig) -> str:
    return hashlib.sha256(config.to_json().encode()).hexdigest()


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, config: ExperimentConfig | None,
                   seed: int, outputs: list[str],
                   inputs: dict[str, str] | None = None) -> Path:
    """Deterministic run manifest: identical config, seed and inputs produce
    an identical file (no timestamps). ``inputs`` maps labels to hashes of
    consumed artifacts (checkpoints, datasets)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seed": seed,
        "config_sha256": config_sha256(config) if config is not None else None,
        "artifact_version": VERSION,
        "inputs": inputs or {},
        "outputs": sorted(outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# -- shipped presets -------------------------------------------------------------

def noiseless_preset() -> ExperimentConfig:
    """Clean task: exact templates, short utterances, stride-2 frontend.
    Calibrated once against the learning acceptance check and frozen."""
    task = ToyTaskConfig(vocab_size=12, d_feat=8, d_min=2, d_max=4, sigma=0.0,
                         min_tokens=2, max_tokens=3, seed=0)
    model = ModelConfig(enc_layers=2, dec_layers=2, heads=4, d_model=32, d_ff=128,
                        vocab_size=task.vocab_size, d_feat=task.d_feat, stride=2,
                        chunk=ChunkLayout(8, 8, 8),
                        mechanism=MechanismConfig("dacs"))
    return ExperimentConfig(
        seed=0, task=task, data=DataSplits(n_train=2000, n_dev=150, n_test=200),
        model=model,
        train=TrainConfig(epochs=45, batch_size=16, label_smoothing=0.1,
                          noam_scale=2.2, warmup=400, clip_norm=5.0, patience=12, seed=0),
        decode=DecodeConfig(max_len=12, beam=1),
    )


def noisy_preset() -> ExperimentConfig:
    """Noisy templates, longer tokens, no subsampling, and a short encoder
    right context (n_r = 2), so a tight look-ahead cap genuinely starves the
    decoder while generous caps match unbounded decoding. Calibrated once
    against the look-ahead degradation check and frozen."""
    task = ToyTaskConfig(vocab_size=12, d_feat=8, d_min=2, d_max=5, sigma=0.3,
                         min_tokens=3, max_tokens=5, seed=1)
    model = ModelConfig(enc_layers=2, dec_layers=2, heads=4, d_model=32, d_ff=128,
                        vocab_size=task.vocab_size, d_feat=task.d_feat, stride=1,
                        chunk=ChunkLayout(4, 8, 2),
                        mechanism=MechanismConfig("dacs"))
    return ExperimentConfig(
        seed=1, task=task, data=DataSplits(n_train=1200, n_dev=150, n_test=150),
        model=model,
        train=TrainConfig(epochs=35, batch_size=16, label_smoothing=0.1,
                          noam_scale=2.2, warmup=400, clip_norm=5.0, patience=10, seed=1),
        decode=DecodeConfig(max_len=14, beam=1),
    )


def tiny_preset() -> ExperimentConfig:
    """Seconds-scale smoke configuration for tests and examples."""
    task = ToyTaskConfig(vocab_size=8, d_feat=6, d_min=2, d_max=3, sigma=0.0,
                         min_tokens=2, max_tokens=4, seed=3)
    model = ModelConfig(enc_layers=1, dec_layers=1, heads=2, d_model=16, d_ff=32,
                        vocab_size=task.vocab_size, d_feat=task.d_feat, stride=2,
                        chunk=ChunkLayout(4, 4, 4),
                        mechanism=MechanismConfig("dacs"))
    return ExperimentConfig(
        seed=3, task=task, data=DataSplits(n_train=120, n_dev=30, n_test=30),
        model=model,
        train=TrainConfig(epochs=4, batch_size=8, noam_scale=2.0, warmup=60, seed=3),
        decode=DecodeConfig(max_len=12, beam=1),
    )


PRESETS = {"noiseless": noiseless_preset, "noisy": noisy_preset, "tiny": tiny_preset}
