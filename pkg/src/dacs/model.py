"""Toy online transformer: strided subsampling frontend, chunkwise
self-attention encoder, decoder stack with a pluggable streaming
cross-attention mechanism. Pre-layer-norm residual wiring throughout, plus a
final norm after each stack.

Two forward paths share one parameter set: a tape path for training
(differentiable, whole sequence) and a numpy path for encoding at inference.
The step-wise decoder lives in decoding.py.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mechattn import cross_attention_train
from .streaming import MechanismConfig

Array = np.ndarray

PAD, SOS, EOS = 0, 1, 2
N_RESERVED = 3

CHECKPOINT_VERSION = 1
LN_EPS = 1e-6


@dataclass(frozen=True)
class ChunkLayout:
    """Chunk sizes of the encoder: central length n_c with n_l left and n_r
    right context frames; the right context is the encoder's latency."""

    n_c: int
    n_l: int
    n_r: int

    def __post_init__(self):
        if self.n_c < 1 or self.n_l < 0 or self.n_r < 0:
            raise ValueError(f"invalid chunk layout {self}")

    def to_dict(self) -> dict:
        return {"n_c": self.n_c, "n_l": self.n_l, "n_r": self.n_r}


@dataclass
class ModelConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    vocab_size: int = 12
    d_feat: int = 8
    stride: int = 4
    frontend_average: bool = True
    chunk: ChunkLayout = field(default_factory=lambda: ChunkLayout(8, 8, 8))
    mechanism: MechanismConfig = field(default_factory=lambda: MechanismConfig("dacs"))

    def __post_init__(self):
        for name in ("enc_layers", "dec_layers", "heads", "d_model", "d_ff", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even for sinusoidal encodings")
        if self.vocab_size < N_RESERVED + 1:
            raise ValueError("vocab_size must leave room for pad/sos/eos plus content")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> dict:
        return {
            "enc_layers": self.enc_layers, "dec_layers": self.dec_layers,
            "heads": self.heads, "d_model": self.d_model, "d_ff": self.d_ff,
            "vocab_size": self.vocab_size, "d_feat": self.d_feat,
            "stride": self.stride, "frontend_average": self.frontend_average,
            "chunk": self.chunk.to_dict(), "mechanism": self.mechanism.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["chunk"] = ChunkLayout(**d["chunk"])
        d["mechanism"] = MechanismConfig.from_dict(d["mechanism"])
        return cls(**d)


# The paper-scale configuration, kept as a named preset; tests run desk scale.
PAPER_SCALE = dict(enc_layers=12, dec_layers=6, heads=4, d_model=256, d_ff=2048,
                   stride=4, chunk=ChunkLayout(64, 64, 64))


def chunk_mask(T: int, layout: ChunkLayout) -> Array:
    """{0,1} self-attention mask: frame t sees its own chunk plus n_l frames
    of left and n_r frames of right context, clipped to the sequence."""
    if T < 1:
        raise ValueError("T must be >= 1")
    mask = np.zeros((T, T))
    for t in range(T):
        start = (t // layout.n_c) * layout.n_c
        lo = max(0, start - layout.n_l)
        hi = min(T, start + layout.n_c + layout.n_r)
        mask[t, lo:hi] = 1.0
    return mask


def positional_encoding(T: int, d_model: int) -> Array:
    """Sinusoidal encodings; pair (2i, 2i+1) carries sin/cos of
    t / 10000^(2i/d_model)."""
    if d_model % 2:
        raise ValueError("d_model must be even")
    pos = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    ang = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.empty((T, d_model))
    pe[:, 0::2] = np.sin(ang)
    pe[:, 1::2] = np.cos(ang)
    return pe


def subsample_frontend(
    features: Array,
    stride: int,
    weight: Array | None = None,
    bias: Array | None = None,
    average: bool = True,
) -> Array:
    """Strided frame reduction followed by a linear projection.

    Keeps ceil(T/stride) frames: the mean of each stride-wide block when
    ``average``, else the block's first frame. ``weight=None`` is the identity
    projection (widths must already agree).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("features must be a non-empty 2-D matrix")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    T = features.shape[0]
    n_out = -(-T // stride)
    pooled = np.empty((n_out, features.shape[1]))
    for s in range(n_out):
        block = features[s * stride: min((s + 1) * stride, T)]
        pooled[s] = block.mean(axis=0) if average else block[0]
    if weight is None:
        return pooled
    out = pooled @ weight
    if bias is not None:
        out = out + bias
    return out


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Array:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d_m, d_k, d_ff = config.d_model, config.d_k, config.d_ff
    p: dict[str, Array] = {}

    def attn_block(prefix: str):
        for h in range(config.heads):
            p[f"{prefix}.wq{h}"] = _glorot(rng, d_m, d_k)
            p[f"{prefix}.wk{h}"] = _glorot(rng, d_m, d_k)
            p[f"{prefix}.wv{h}"] = _glorot(rng, d_m, d_k)
        p[f"{prefix}.wo"] = _glorot(rng, d_m, d_m)

    def ln_block(prefix: str):
        p[f"{prefix}.g"] = np.ones(d_m)
        p[f"{prefix}.b"] = np.zeros(d_m)

    def ffn_block(prefix: str):
        p[f"{prefix}.w1"] = _glorot(rng, d_m, d_ff)
        p[f"{prefix}.b1"] = np.zeros(d_ff)
        p[f"{prefix}.w2"] = _glorot(rng, d_ff, d_m)
        p[f"{prefix}.b2"] = np.zeros(d_m)

    p["frontend.w"] = _glorot(rng, config.d_feat, d_m)
    p["frontend.b"] = np.zeros(d_m)
    for l in range(config.enc_layers):
        ln_block(f"enc{l}.ln1")
        attn_block(f"enc{l}.self")
        ln_block(f"enc{l}.ln2")
        ffn_block(f"enc{l}.ffn")
    ln_block("enc.ln")
    p["embed.w"] = rng.normal(0.0, d_m ** -0.5, size=(config.vocab_size, d_m))
    for l in range(config.dec_layers):
        ln_block(f"dec{l}.ln1")
        attn_block(f"dec{l}.self")
        ln_block(f"dec{l}.ln2")
        attn_block(f"dec{l}.cross")
        ln_block(f"dec{l}.ln3")
        ffn_block(f"dec{l}.ffn")
    ln_block("dec.ln")
    p["out.w"] = _glorot(rng, d_m, config.vocab_size)
    p["out.b"] = np.zeros(config.vocab_size)
    return {k: ad.parameter(v) for k, v in p.items()}


def layer_norm_np(x: Array, g: Array, b: Array, eps: float = LN_EPS) -> Array:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc * (var + eps) ** -0.5 * g + b


def _layer_norm_t(x: Tensor, g: Tensor, b: Tensor, eps: float = LN_EPS) -> Tensor:
    mu = ad.tmean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.tmean(xc * xc, axis=-1, keepdims=True)
    return xc * ((var + eps) ** -0.5) * g + b


class Model:
    """Parameter container plus the whole-sequence forward passes."""

    def __init__(self, config: ModelConfig, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = init_params(config, seed) if params is None else params

    # -- parameter access ---------------------------------------------------

    def p(self, name: str) -> Tensor:
        return self.params[name]

    def pv(self, name: str) -> Array:
        return self.params[name].value

    def head_mats(self, prefix: str) -> tuple[list[Array], list[Array], list[Array], Array]:
        h = self.config.heads
        return ([self.pv(f"{prefix}.wq{i}") for i in range(h)],
                [self.pv(f"{prefix}.wk{i}") for i in range(h)],
                [self.pv(f"{prefix}.wv{i}") for i in range(h)],
                self.pv(f"{prefix}.wo"))

    # -- tape path (training) -------------------------------------------------

    def _multi_head_t(self, prefix: str, x_norm: Tensor, kv_norm: Tensor,
                      mask: Array) -> Tensor:
        cfg = self.config
        scale = 1.0 / math.sqrt(cfg.d_k)
        heads = []
        for h in range(cfg.heads):
            Q = x_norm @ self.p(f"{prefix}.wq{h}")
            K = kv_norm @ self.p(f"{prefix}.wk{h}")
            V = kv_norm @ self.p(f"{prefix}.wv{h}")
            W = ad.masked_softmax((Q @ K.T) * scale, mask)
            heads.append(W @ V)
        return ad.concat(heads, axis=1) @ self.p(f"{prefix}.wo")

    def _ffn_t(self, prefix: str, x: Tensor) -> Tensor:
        h = ad.relu(x @ self.p(f"{prefix}.w1") + self.p(f"{prefix}.b1"))
        return h @ self.p(f"{prefix}.w2") + self.p(f"{prefix}.b2")

    def encode_t(self, features: Array) -> Tensor:
        cfg = self.config
        pooled = subsample_frontend(features, cfg.stride, average=cfg.frontend_average)
        x = ad.as_tensor(pooled) @ self.p("frontend.w") + self.p("frontend.b")
        T = x.shape[0]
        x = x + positional_encoding(T, cfg.d_model)
        mask = chunk_mask(T, cfg.chunk)
        for l in range(cfg.enc_layers):
            xn = _layer_norm_t(x, self.p(f"enc{l}.ln1.g"), self.p(f"enc{l}.ln1.b"))
            x = x + self._multi_head_t(f"enc{l}.self", xn, xn, mask)
            xn = _layer_norm_t(x, self.p(f"enc{l}.ln2.g"), self.p(f"enc{l}.ln2.b"))
            x = x + self._ffn_t(f"enc{l}.ffn", xn)
        return _layer_norm_t(x, self.p("enc.ln.g"), self.p("enc.ln.b"))

    def decoder_forward_train(self, encoder_states, tokens,
                              capture: dict | None = None) -> Tensor:
        """Teacher-forced decoder pass: tokens must begin with <sos>; returns
        L x V logits. ``capture[(layer, head)]`` collects cross-attention
        weight matrices when a dict is supplied."""
        cfg = self.config
        tokens = np.asarray(tokens, dtype=np.intp)
        if tokens.size == 0:
            raise ValueError("decoder needs at least the <sos> token")
        if tokens[0] != SOS:
            raise ValueError("decoder input must begin with <sos>")
        enc = ad.as_tensor(encoder_states)
        L = tokens.size
        x = ad.take_rows(self.p("embed.w"), tokens) * math.sqrt(cfg.d_model)
        x = x + positional_encoding(L, cfg.d_model)
        causal = np.tril(np.ones((L, L)))
        for l in range(cfg.dec_layers):
            xn = _layer_norm_t(x, self.p(f"dec{l}.ln1.g"), self.p(f"dec{l}.ln1.b"))
            x = x + self._multi_head_t(f"dec{l}.self", xn, xn, causal)
            xn = _layer_norm_t(x, self.p(f"dec{l}.ln2.g"), self.p(f"dec{l}.ln2.b"))
            head_capture: dict | None = {} if capture is not None else None
            wq = [self.p(f"dec{l}.cross.wq{h}") for h in range(cfg.heads)]
            wk = [self.p(f"dec{l}.cross.wk{h}") for h in range(cfg.heads)]
            wv = [self.p(f"dec{l}.cross.wv{h}") for h in range(cfg.heads)]
            x = x + cross_attention_train(xn, enc, wq, wk, wv,
                                          self.p(f"dec{l}.cross.wo"),
                                          cfg.mechanism, head_capture)
            if capture is not None:
                for h, W in head_capture.items():
                    capture[(l, h)] = W
            xn = _layer_norm_t(x, self.p(f"dec{l}.ln3.g"), self.p(f"dec{l}.ln3.b"))
            x = x + self._ffn_t(f"dec{l}.ffn", xn)
        x = _layer_norm_t(x, self.p("dec.ln.g"), self.p("dec.ln.b"))
        return x @ self.p("out.w") + self.p("out.b")

    def forward_train(self, features, tokens, capture: dict | None = None) -> Tensor:
        return self.decoder_forward_train(self.encode_t(features), tokens, capture)

    # -- numpy path (inference) ----------------------------------------------

    def encode(self, features: Array) -> Array:
        cfg = self.config
        pooled = subsample_frontend(features, cfg.stride, average=cfg.frontend_average)
        x = pooled @ self.pv("frontend.w") + self.pv("frontend.b")
        T = x.shape[0]
        x = x + positional_encoding(T, cfg.d_model)
        mask = chunk_mask(T, cfg.chunk) != 0
        scale = 1.0 / math.sqrt(cfg.d_k)
        for l in range(cfg.enc_layers):
            xn = layer_norm_np(x, self.pv(f"enc{l}.ln1.g"), self.pv(f"enc{l}.ln1.b"))
            wq, wk, wv, wo = self.head_mats(f"enc{l}.self")
            heads = []
            for h in range(cfg.heads):
                e = (xn @ wq[h]) @ (xn @ wk[h]).T * scale
                e = np.where(mask, e, -np.inf)
                m = e.max(axis=-1, keepdims=True)
                z = np.exp(e - m)
                z[~np.isfinite(e)] = 0.0
                w = z / z.sum(axis=-1, keepdims=True)
                heads.append(w @ (xn @ wv[h]))
            x = x + np.concatenate(heads, axis=1) @ wo
            xn = layer_norm_np(x, self.pv(f"enc{l}.ln2.g"), self.pv(f"enc{l}.ln2.b"))
            hid = np.maximum(xn @ self.pv(f"enc{l}.ffn.w1") + self.pv(f"enc{l}.ffn.b1"), 0.0)
            x = x + hid @ self.pv(f"enc{l}.ffn.w2") + self.pv(f"enc{l}.ffn.b2")
        return layer_norm_np(x, self.pv("enc.ln.g"), self.pv("enc.ln.b"))

    # -- checkpointing ---------------------------------------------------------

    def save(self, path) -> None:
        """Versioned little-endian container: config JSON + named tensors."""
        payload = {k: t.value.astype("<f8") for k, t in self.params.items()}
        meta = json.dumps({"format_version": CHECKPOINT_VERSION,
                           "config": self.config.to_dict()})
        np.savez(path, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **payload)

    @classmethod
    def load(cls, path) -> "Model":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("format_version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version: {meta.get('format_version')}")
            config = ModelConfig.from_dict(meta["config"])
            expected = init_params(config, seed=0)
            names = set(data.files) - {"__meta__"}
            if names != set(expected):
                missing = sorted(set(expected) - names)
                extra = sorted(names - set(expected))
                raise ValueError(f"checkpoint/config mismatch: missing={missing}, extra={extra}")
            params = {}
            for k in expected:
                arr = np.asarray(data[k], dtype=np.float64)
                if arr.shape != expected[k].value.shape:
                    raise ValueError(f"shape mismatch for {k}: {arr.shape} vs "
                                     f"{expected[k].value.shape}")
                params[k] = ad.parameter(arr)
        return cls(config, params=params)

    def copy(self) -> "Model":
        params = {k: ad.parameter(t.value.copy()) for k, t in self.params.items()}
        return Model(self.config, params=params)
