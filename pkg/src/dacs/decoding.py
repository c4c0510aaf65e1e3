"""Step-wise online decoding on top of the numpy inference path.

One StreamState per hypothesis: self-attention key/value caches grow per
emitted token, cross-attention halting positions advance monotonically. The
adaptive mechanism synchronizes one halting position across every layer and
head; the baseline mechanisms track one position per (layer, head).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import stable_sigmoid
from .model import EOS, SOS, Model, layer_norm_np, positional_encoding
from .streaming import (MechanismConfig, StepLog, StepTrace, dacs_head_scan,
                        hma_step, mocha_step, mta_step, sync_step)

Array = np.ndarray


@dataclass
class StreamState:
    """Single-owner per-hypothesis decode cursor."""

    t_prev: int = 0
    per_head_t: dict[tuple[int, int], int] = field(default_factory=dict)
    emitted: list[int] = field(default_factory=list)
    self_k: list[list[list[Array]]] = field(default_factory=list)  # [layer][head][step]
    self_v: list[list[list[Array]]] = field(default_factory=list)
    step_log: StepLog = field(default_factory=StepLog)
    trace: list[StepTrace] = field(default_factory=list)
    logprob: float = 0.0

    @classmethod
    def fresh(cls, n_layers: int, n_heads: int) -> "StreamState":
        return cls(
            per_head_t={(l, h): 0 for l in range(n_layers) for h in range(n_heads)},
            self_k=[[[] for _ in range(n_heads)] for _ in range(n_layers)],
            self_v=[[[] for _ in range(n_heads)] for _ in range(n_layers)],
        )

    def branch(self) -> "StreamState":
        """Cheap copy for beam expansion; cached rows are shared, lists are not."""
        return StreamState(
            t_prev=self.t_prev,
            per_head_t=dict(self.per_head_t),
            emitted=list(self.emitted),
            self_k=[[list(h) for h in layer] for layer in self.self_k],
            self_v=[[list(h) for h in layer] for layer in self.self_v],
            step_log=StepLog(list(self.step_log.entries)),
            trace=list(self.trace),
            logprob=self.logprob,
        )


@dataclass
class DecodeResult:
    tokens: list[int]
    step_log: StepLog
    trace: list[StepTrace]
    truncated: bool = False
    logprob: float = 0.0


def _cross_kv(model: Model, enc: Array) -> dict[tuple[int, int], tuple[Array, Array]]:
    out = {}
    for l in range(model.config.dec_layers):
        wq, wk, wv, _ = model.head_mats(f"dec{l}.cross")
        for h in range(model.config.heads):
            out[(l, h)] = (enc @ wk[h], enc @ wv[h])
    return out


def _log_softmax(x: Array) -> Array:
    m = x.max()
    z = x - m
    return z - np.log(np.exp(z).sum())


def _mechanism_step(mech: MechanismConfig, q: Array, K: Array, V: Array,
                    t_prev: int) -> tuple[Array, int, int, Array]:
    if mech.kind == "dacs":
        c, halt, steps = dacs_head_scan(q, K, V, t_prev, mech.max_lookahead)
        weights = np.zeros(K.shape[0])
        weights[:halt] = stable_sigmoid(K[:halt] @ q / np.sqrt(q.shape[0]))
        return c, halt, steps, weights
    if mech.kind == "hma":
        return hma_step(q, K, V, t_prev)
    if mech.kind in ("mocha", "smocha"):
        return mocha_step(q, K, V, t_prev, mech.window)
    if mech.kind == "mta":
        return mta_step(q, K, V, t_prev)
    raise ValueError(f"unknown mechanism kind: {mech.kind}")


def _decode_step(model: Model, cross, state: StreamState, mech: MechanismConfig,
                 tok_in: int, pos: int, step: int,
                 collect_weights: bool) -> Array:
    """Run one decoder step; mutates state (caches, positions, logs).
    Returns the logits row for this step."""
    cfg = model.config
    scale = 1.0 / math.sqrt(cfg.d_k)
    x = model.pv("embed.w")[tok_in] * math.sqrt(cfg.d_model)
    x = x + positional_encoding(pos + 1, cfg.d_model)[pos]

    synced = mech.kind == "dacs"
    t_entry = state.t_prev if synced else max(state.per_head_t.values())
    halts: dict[tuple[int, int], int] = {}
    steps: dict[tuple[int, int], int] = {}
    weights: dict[tuple[int, int], Array] | None = {} if collect_weights else None

    for l in range(cfg.dec_layers):
        # masked self-attention over the emitted prefix
        xn = layer_norm_np(x, model.pv(f"dec{l}.ln1.g"), model.pv(f"dec{l}.ln1.b"))
        wq, wk, wv, wo = model.head_mats(f"dec{l}.self")
        heads = []
        for h in range(cfg.heads):
            state.self_k[l][h].append(xn @ wk[h])
            state.self_v[l][h].append(xn @ wv[h])
            K = np.stack(state.self_k[l][h])
            V = np.stack(state.self_v[l][h])
            e = K @ (xn @ wq[h]) * scale
            w = np.exp(e - e.max())
            w /= w.sum()
            heads.append(w @ V)
        x = x + np.concatenate(heads) @ wo

        # streaming cross-attention
        xn = layer_norm_np(x, model.pv(f"dec{l}.ln2.g"), model.pv(f"dec{l}.ln2.b"))
        cwq = [model.pv(f"dec{l}.cross.wq{h}") for h in range(cfg.heads)]
        contexts = []
        for h in range(cfg.heads):
            K, V = cross[(l, h)]
            q = xn @ cwq[h]
            t_head = state.t_prev if synced else state.per_head_t[(l, h)]
            c, halt, n_steps, w_row = _mechanism_step(mech, q, K, V, t_head)
            contexts.append(c)
            halts[(l, h)] = halt
            steps[(l, h)] = n_steps
            state.step_log.add(step, l, h, n_steps)
            if weights is not None:
                weights[(l, h)] = w_row
            if not synced:
                state.per_head_t[(l, h)] = max(t_head, halt)
        x = x + np.concatenate(contexts) @ model.pv(f"dec{l}.cross.wo")

        xn = layer_norm_np(x, model.pv(f"dec{l}.ln3.g"), model.pv(f"dec{l}.ln3.b"))
        hid = np.maximum(xn @ model.pv(f"dec{l}.ffn.w1") + model.pv(f"dec{l}.ffn.b1"), 0.0)
        x = x + hid @ model.pv(f"dec{l}.ffn.w2") + model.pv(f"dec{l}.ffn.b2")

    if synced:
        state.t_prev = sync_step(halts.values(), t_entry)
    t_sync = state.t_prev if synced else max(state.per_head_t.values())
    state.trace.append(StepTrace(step=step, t_entry=t_entry, halts=halts,
                                 steps=steps, t_sync=t_sync, token=-1,
                                 weights=weights))
    x = layer_norm_np(x, model.pv("dec.ln.g"), model.pv("dec.ln.b"))
    return x @ model.pv("out.w") + model.pv("out.b")


def greedy_decode(model: Model, encoder_states: Array,
                  mech: MechanismConfig | None = None, max_len: int = 64,
                  force_tokens=None, collect_weights: bool = True) -> DecodeResult:
    """Greedy streaming decode; with ``force_tokens`` the emissions are
    teacher-forced (the list must end with <eos> to terminate cleanly)."""
    cfg = model.config
    mech = cfg.mechanism if mech is None else mech
    encoder_states = np.asarray(encoder_states, dtype=np.float64)
    if encoder_states.ndim != 2 or encoder_states.shape[0] == 0:
        raise ValueError("encoder states must be a non-empty T x d matrix")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    cross = _cross_kv(model, encoder_states)
    state = StreamState.fresh(cfg.dec_layers, cfg.heads)
    horizon = len(force_tokens) if force_tokens is not None else max_len
    tok = SOS
    truncated = False
    for i in range(horizon):
        logits = _decode_step(model, cross, state, mech, tok, i, i, collect_weights)
        logp = _log_softmax(logits)
        nxt = int(force_tokens[i]) if force_tokens is not None else int(np.argmax(logp))
        state.logprob += float(logp[nxt])
        state.trace[-1].token = nxt
        state.emitted.append(nxt)
        if nxt == EOS:
            break
        if i == horizon - 1 and force_tokens is None:
            truncated = True
        tok = nxt
    tokens = [t for t in state.emitted if t != EOS]
    return DecodeResult(tokens=tokens, step_log=state.step_log, trace=state.trace,
                        truncated=truncated, logprob=state.logprob)


def beam_decode(model: Model, encoder_states: Array,
                mech: MechanismConfig | None = None, max_len: int = 64,
                beam: int = 4, collect_weights: bool = False) -> DecodeResult:
    """Beam search with an independent StreamState per hypothesis. Scores are
    plain summed log-probabilities (no length normalization); ties break on
    the lower token id, so width 1 reproduces greedy decoding exactly."""
    cfg = model.config
    mech = cfg.mechanism if mech is None else mech
    encoder_states = np.asarray(encoder_states, dtype=np.float64)
    if encoder_states.ndim != 2 or encoder_states.shape[0] == 0:
        raise ValueError("encoder states must be a non-empty T x d matrix")
    if beam < 1:
        raise ValueError("beam width must be >= 1")
    cross = _cross_kv(model, encoder_states)
    live = [StreamState.fresh(cfg.dec_layers, cfg.heads)]
    done: list[StreamState] = []
    truncated = False
    for i in range(max_len):
        candidates: list[tuple[float, int, int, StreamState]] = []
        for state in live:
            tok = state.emitted[-1] if state.emitted else SOS
            logits = _decode_step(model, cross, state, mech, tok, i, i, collect_weights)
            logp = _log_softmax(logits)
            for v in range(cfg.vocab_size):
                candidates.append((state.logprob + float(logp[v]), v, id(state), state))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        selected = 0
        for score, v, _, parent in candidates:
            if selected >= beam:
                break
            selected += 1
            child = parent.branch()
            child.logprob = score
            child.trace[-1].token = v
            child.emitted.append(v)
            if v == EOS:
                done.append(child)
            else:
                live.append(child)
        if not live or len(done) >= beam:
            break
    if live and not done:
        truncated = True
    pool = done if done else live
    best = max(pool, key=lambda s: s.logprob)
    tokens = [t for t in best.emitted if t != EOS]
    return DecodeResult(tokens=tokens, step_log=best.step_log, trace=best.trace,
                        truncated=truncated, logprob=best.logprob)


def decode_utterance(model: Model, encoder_states: Array,
                     mech: MechanismConfig | None = None, max_len: int = 64,
                     beam: int = 1, collect_weights: bool = True) -> DecodeResult:
    """Decode one utterance: greedy when beam == 1, beam search otherwise."""
    if beam == 1:
        return greedy_decode(model, encoder_states, mech, max_len,
                             collect_weights=collect_weights)
    return beam_decode(model, encoder_states, mech, max_len, beam,
                       collect_weights=collect_weights)
