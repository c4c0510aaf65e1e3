"""Training harness: label-smoothed cross-entropy, Noam schedule, Adam with
global-norm clipping, the finite-difference gradient checker, and the
deterministic mini-batch loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_node
from .model import EOS, PAD, SOS, Model
from .toytask import Utterance

Array = np.ndarray


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    label_smoothing: float = 0.1
    noam_scale: float = 2.0
    warmup: int = 300
    clip_norm: float = 5.0
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label smoothing must be in [0, 1)")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "label_smoothing": self.label_smoothing,
                "noam_scale": self.noam_scale, "warmup": self.warmup,
                "clip_norm": self.clip_norm, "patience": self.patience,
                "seed": self.seed}


def label_smoothed_ce(logits: Array, targets, eps: float,
                      pad_id: int = PAD) -> tuple[float, Array]:
    """Cross-entropy against (1-eps)*one-hot + eps/V, averaged over non-pad
    positions. Returns the loss and its analytic gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2 or targets.ndim != 1 or logits.shape[0] != targets.size:
        raise ValueError(f"logits {logits.shape} do not match targets {targets.shape}")
    if not 0 <= eps < 1:
        raise ValueError("eps must be in [0, 1)")
    L, V = logits.shape
    keep = targets != pad_id
    n = int(keep.sum())
    if n == 0:
        raise ValueError("all target positions are padding")
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    logZ = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logZ
    dist = np.full((L, V), eps / V)
    dist[np.arange(L), targets] += 1.0 - eps
    loss = float(-(dist[keep] * logp[keep]).sum() / n)
    grad = (np.exp(logp) - dist) / n
    grad[~keep] = 0.0
    return loss, grad


def smoothed_ce_node(logits: Tensor, targets, eps: float,
                     pad_id: int = PAD) -> Tensor:
    """Tape wrapper around label_smoothed_ce (custom op, analytic backward)."""
    loss, grad = label_smoothed_ce(logits.value, targets, eps, pad_id)
    return make_node(np.asarray(loss), (logits,), lambda g: (g * grad,))


def noam_lr(step: int, d_model: int, warmup: int, scale: float) -> float:
    """scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class GradCheckEntry:
    index: int
    analytic: float
    numeric: float
    rel_err: float
    ok: bool


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return (f"{status}: {len(self.entries)} coordinates, "
                f"max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e})")


def grad_check(f, theta: Array, h: float = 1e-5, tol: float = 1e-3,
               indices=None) -> GradCheckReport:
    """Central-difference check of an analytic gradient.

    ``f(theta) -> (value, grad)`` must be a deterministic scalar function of a
    flat parameter vector. Probes every coordinate unless ``indices`` narrows
    the set.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    value, grad = f(theta)
    if not np.isfinite(value) or not np.isfinite(grad).all():
        raise ValueError("non-finite function value or gradient")
    idx = range(theta.size) if indices is None else indices
    entries = []
    for i in idx:
        step = np.zeros_like(theta)
        step[i] = h
        up, _ = f(theta + step)
        dn, _ = f(theta - step)
        numeric = (up - dn) / (2 * h)
        analytic = float(grad[i])
        denom = max(abs(analytic), abs(numeric), 1e-8)
        rel = abs(analytic - numeric) / denom
        entries.append(GradCheckEntry(int(i), analytic, float(numeric), rel, rel < tol))
    return GradCheckReport(entries, tol)


# -- optimizer ----------------------------------------------------------------

class Adam:
    """Adaptive-moment optimizer with the original transformer hyperparameters."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.98, eps: float = 1e-9):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.value) for k, t in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in sorted(self.params):
            p = self.params[k]
            g = p.grad
            if g is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p.value = p.value - lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for k in sorted(params):
        g = params[k].grad
        if g is not None:
            total += float((g * g).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for k in sorted(params):
            if params[k].grad is not None:
                params[k].grad = params[k].grad * scale
    return norm


# -- parameter vector helpers --------------------------------------------------

def flatten_params(params: dict[str, Tensor]) -> Array:
    return np.concatenate([params[k].value.ravel() for k in sorted(params)])


def set_params_from(params: dict[str, Tensor], theta: Array) -> None:
    off = 0
    for k in sorted(params):
        n = params[k].value.size
        params[k].value = theta[off:off + n].reshape(params[k].value.shape).copy()
        off += n
    if off != theta.size:
        raise ValueError("parameter vector length mismatch")


def flatten_grads(params: dict[str, Tensor]) -> Array:
    parts = []
    for k in sorted(params):
        g = params[k].grad
        parts.append((np.zeros_like(params[k].value) if g is None else g).ravel())
    return np.concatenate(parts)


def param_slices(params: dict[str, Tensor]) -> dict[str, slice]:
    out = {}
    off = 0
    for k in sorted(params):
        n = params[k].value.size
        out[k] = slice(off, off + n)
        off += n
    return out


# -- gradient suite ---------------------------------------------------------------

def model_grad_check(model: Model, utt: Utterance, eps: float = 0.1,
                     h: float = 1e-5, tol: float = 1e-3, per_group: int = 1,
                     seed: int = 0) -> GradCheckReport:
    """Finite-difference audit of the full training loss, probing
    ``per_group`` random coordinates from every parameter tensor."""
    theta0 = flatten_params(model.params)
    slices = param_slices(model.params)
    rng = np.random.default_rng(seed)
    indices = []
    for name in sorted(slices):
        sl = slices[name]
        size = sl.stop - sl.start
        for _ in range(per_group):
            indices.append(sl.start + int(rng.integers(size)))

    def f(theta):
        set_params_from(model.params, theta)
        ad.zero_grads(model.params)
        loss = utterance_loss(model, utt, eps)
        loss.backward()
        return loss.item(), flatten_grads(model.params)

    try:
        return grad_check(f, theta0, h=h, tol=tol, indices=indices)
    finally:
        set_params_from(model.params, theta0)


def mechanism_grad_check(kind: str, L: int = 4, T: int = 8, window: int = 3,
                         h: float = 1e-5, tol: float = 1e-3,
                         seed: int = 0) -> GradCheckReport:
    """Finite-difference audit of one mechanism's training weights as a
    function of the raw energies (which drive both P and the chunk
    energies)."""
    from .mechattn import train_weights
    from .streaming import MechanismConfig

    rng = np.random.default_rng(seed)
    E0 = rng.normal(0.0, 1.0, size=(L, T))
    C = rng.normal(0.0, 1.0, size=(L, T))  # fixed probe direction
    mech = MechanismConfig(kind, window=window) if kind in ("mocha", "smocha") \
        else MechanismConfig(kind)

    def f(theta):
        E = ad.parameter(theta.reshape(L, T))
        out = ad.tsum(train_weights(mech, E) * C)
        out.backward()
        return out.item(), E.grad.ravel()

    return grad_check(f, E0.ravel(), h=h, tol=tol)


def attention_grad_check(L: int = 3, T: int = 5, d: int = 4, h: float = 1e-5,
                         tol: float = 1e-3, seed: int = 0) -> GradCheckReport:
    """Finite-difference audit of masked scaled-dot attention w.r.t. Q, K, V."""
    rng = np.random.default_rng(seed)
    Q0 = rng.normal(size=(L, d))
    K0 = rng.normal(size=(T, d))
    V0 = rng.normal(size=(T, d))
    C = rng.normal(size=(L, d))
    mask = np.ones((L, T))
    mask[0, -1] = 0.0
    sizes = [Q0.size, K0.size, V0.size]

    def f(theta):
        q, k, v = np.split(theta, np.cumsum(sizes)[:-1])
        Q = ad.parameter(q.reshape(L, d))
        K = ad.parameter(k.reshape(T, d))
        V = ad.parameter(v.reshape(T, d))
        W = ad.masked_softmax((Q @ K.T) * (1.0 / math.sqrt(d)), mask)
        out = ad.tsum((W @ V) * C)
        out.backward()
        return out.item(), np.concatenate([Q.grad.ravel(), K.grad.ravel(), V.grad.ravel()])

    theta0 = np.concatenate([Q0.ravel(), K0.ravel(), V0.ravel()])
    return grad_check(f, theta0, h=h, tol=tol)


# -- training loop --------------------------------------------------------------

def targets_for(tokens: list[int]) -> tuple[Array, Array]:
    """Teacher-forcing pair: decoder input [sos, y...] and labels [y..., eos]."""
    inp = np.asarray([SOS] + list(tokens), dtype=np.intp)
    out = np.asarray(list(tokens) + [EOS], dtype=np.intp)
    return inp, out


def utterance_loss(model: Model, utt: Utterance, eps: float) -> Tensor:
    inp, out = targets_for(utt.tokens)
    logits = model.forward_train(utt.features, inp)
    return smoothed_ce_node(logits, out, eps)


def dataset_loss(model: Model, utts: list[Utterance], eps: float) -> float:
    """Position-weighted mean loss over a dataset, no gradients."""
    total, n_pos = 0.0, 0
    for u in utts:
        n = len(u.tokens) + 1
        total += utterance_loss(model, u, eps).item() * n
        n_pos += n
    return total / n_pos


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    dev_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,dev_loss,lr\n")
            for i, (tr, dv, lr) in enumerate(zip(self.train_loss, self.dev_loss, self.lr), 1):
                fh.write(f"{i},{tr:.17g},{dv:.17g},{lr:.17g}\n")


def train(model: Model, train_data: list[Utterance], dev_data: list[Utterance],
          cfg: TrainConfig, log=None) -> tuple[Model, TrainHistory]:
    """Mini-batch Adam with the Noam schedule and early stopping.

    Deterministic for a fixed seed: batch order comes from one generator and
    gradients accumulate in utterance order. Returns the best-dev model.
    """
    if not train_data:
        raise ValueError("empty training set")
    opt = Adam(model.params)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_dev = math.inf
    best_params = None
    since_best = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_data))
        epoch_loss, epoch_pos = 0.0, 0
        lr = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_data[i] for i in order[start:start + cfg.batch_size]]
            ad.zero_grads(model.params)
            batch_pos = sum(len(u.tokens) + 1 for u in batch)
            for u in batch:
                loss = utterance_loss(model, u, cfg.label_smoothing)
                w = (len(u.tokens) + 1) / batch_pos
                loss.backward(np.asarray(w))
                val = loss.item()
                if not math.isfinite(val):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
                epoch_loss += val * (len(u.tokens) + 1)
                epoch_pos += len(u.tokens) + 1
            clip_global_norm(model.params, cfg.clip_norm)
            step += 1
            lr = noam_lr(step, model.config.d_model, cfg.warmup, cfg.noam_scale)
            opt.step(lr)
        dev = dataset_loss(model, dev_data, cfg.label_smoothing) if dev_data else math.nan
        history.train_loss.append(epoch_loss / epoch_pos)
        history.dev_loss.append(dev)
        history.lr.append(lr)
        if log is not None:
            log(f"epoch {epoch}: train {history.train_loss[-1]:.4f} "
                f"dev {dev:.4f} lr {lr:.2e}")
        if dev_data:
            if dev < best_dev - 1e-12:
                best_dev = dev
                best_params = {k: t.value.copy() for k, t in model.params.items()}
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    history.stopped_early = True
                    break
    if best_params is not None:
        for k, v in best_params.items():
            model.params[k].value = v
    return model, history
