"""Command-line entry point.

Subcommands: gen, train, decode, sweep-m, compare, gradcheck, render. All
commands are non-interactive: progress goes to stderr, results go to files
under --out. Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics, streaming
from .evalrun import evaluate_dataset
from .experiment import (ConfigError, ExperimentConfig, file_sha256,
                         load_config, write_manifest)
from .model import Model
from .streaming import MechanismConfig
from .toytask import gen_toy_dataset, load_dataset, save_dataset
from .training import (attention_grad_check, mechanism_grad_check,
                       model_grad_check, train)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _parse_lookahead(text: str) -> float:
    if text == "inf":
        return math.inf
    try:
        value = int(text)
    except ValueError:
        raise UsageError(f"--max-lookahead must be an integer or 'inf', got {text!r}")
    return float(value)


def _mechanism_override(args, base: MechanismConfig) -> MechanismConfig:
    kind = getattr(args, "mechanism", None) or base.kind
    m = base.max_lookahead if getattr(args, "max_lookahead", None) is None \
        else _parse_lookahead(args.max_lookahead)
    w = base.window if getattr(args, "chunk_window", None) is None else args.chunk_window
    return MechanismConfig(kind=kind, max_lookahead=m if kind == "dacs" else math.inf,
                           window=w)


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed,
                      task=replace(cfg.task, seed=args.seed),
                      train=replace(cfg.train, seed=args.seed))
    return cfg


def cmd_gen(args) -> int:
    cfg = _load_experiment(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = {"train": (cfg.data.n_train, 0), "dev": (cfg.data.n_dev, 1),
              "test": (cfg.data.n_test, 2)}
    outputs = []
    for name, (n, offset) in splits.items():
        utts = gen_toy_dataset(cfg.task, n, split_seed=offset)
        path = out / f"{name}.npz"
        save_dataset(path, utts, cfg.task)
        outputs.append(path.name)
        _log(f"gen: wrote {path} ({n} utterances)")
    write_manifest(out, "gen", cfg, cfg.seed, outputs)
    return 0


def cmd_train(args) -> int:
    cfg = _load_experiment(args)
    data_dir = Path(args.data)
    train_utts, _ = load_dataset(data_dir / "train.npz")
    dev_utts, _ = load_dataset(data_dir / "dev.npz")
    model_cfg = cfg.model
    if args.mechanism:
        model_cfg = replace(model_cfg,
                            mechanism=_mechanism_override(args, model_cfg.mechanism))
    model = Model(model_cfg, seed=cfg.seed)
    _log(f"train: {len(train_utts)} train / {len(dev_utts)} dev utterances, "
         f"mechanism={model_cfg.mechanism.kind}")
    model, history = train(model, train_utts, dev_utts, cfg.train, log=_log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "checkpoint.npz")
    history.to_csv(out / "curve.csv")
    write_manifest(out, "train", cfg, cfg.seed, ["checkpoint.npz", "curve.csv"])
    _log(f"train: wrote {out / 'checkpoint.npz'}")
    return 0


def _decode_summary(model, utts, mech, max_len, beam, threads,
                    collect_weights=False):
    return evaluate_dataset(model, utts, mech=mech, max_len=max_len, beam=beam,
                            threads=threads, collect_weights=collect_weights)


def cmd_decode(args) -> int:
    model = Model.load(args.checkpoint)
    utts, _ = load_dataset(args.data)
    mech = _mechanism_override(args, model.config.mechanism)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_dump = args.dump_attn
    summary = _decode_summary(model, utts, mech, args.max_len, args.beam,
                              args.threads, collect_weights=n_dump > 0)
    outputs = ["report.json", "transcripts.txt", "refs.txt"]
    with (out / "transcripts.txt").open("w") as fh:
        for u in summary.per_utt:
            fh.write(" ".join(map(str, u.tokens)) + "\n")
    with (out / "refs.txt").open("w") as fh:
        for u in summary.per_utt:
            fh.write(" ".join(map(str, u.ref)) + "\n")
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for u in summary.per_utt:
        streaming.write_trace(traces / f"utt_{u.index:06d}.jsonl", u.result.trace)
    outputs.append("traces/")
    for u in summary.per_utt[:n_dump]:
        dump_dir = out / f"attn_{u.index:06d}"
        metrics.attention_dump(u.result.trace, dump_dir,
                               meta={"mechanism": mech.kind, "utterance": u.index})
        outputs.append(dump_dir.name + "/")
    report = summary.to_dict()
    report["mechanism"] = mech.to_dict()
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "decode", None, args.seed or 0, outputs,
                   inputs={"checkpoint": file_sha256(args.checkpoint),
                           "data": file_sha256(args.data)})
    _log(f"decode: ter={summary.ter:.4f} mean_r={summary.mean_r:.4f} "
         f"({len(utts)} utterances)")
    return 0


def cmd_sweep_m(args) -> int:
    model = Model.load(args.checkpoint)
    utts, _ = load_dataset(args.data)
    m_values = [_parse_lookahead(tok) for tok in args.m_list.split(",") if tok]
    if not m_values:
        raise UsageError("--m-list must name at least one value")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for m in m_values:
        mech = MechanismConfig("dacs", max_lookahead=m)
        summary = _decode_summary(model, utts, mech, args.max_len, args.beam,
                                  args.threads)
        label = "inf" if m == math.inf else str(int(m))
        rows.append((label, summary.ter, summary.mean_r, summary.mean_lag,
                     summary.max_lag))
        _log(f"sweep-m: M={label} ter={summary.ter:.4f} r={summary.mean_r:.4f}")
    with (out / "sweep.csv").open("w") as fh:
        fh.write("M,ter,mean_r,mean_lag,max_lag\n")
        for label, ter, r, mlag, xlag in rows:
            fh.write(f"{label},{ter:.6f},{r:.6f},{mlag:.4f},{xlag:.4f}\n")
    write_manifest(out, "sweep-m", None, args.seed or 0, ["sweep.csv"],
                   inputs={"checkpoint": file_sha256(args.checkpoint),
                           "data": file_sha256(args.data)})
    return 0


def cmd_compare(args) -> int:
    utts, _ = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in args.checkpoints:
        model = Model.load(path)
        mech = model.config.mechanism
        summary = _decode_summary(model, utts, mech, args.max_len, args.beam,
                                  args.threads)
        rows.append((mech.kind, summary.ter, summary.mean_r))
        _log(f"compare: {mech.kind} ter={summary.ter:.4f} r={summary.mean_r:.4f}")
    with (out / "compare.csv").open("w") as fh:
        fh.write("mechanism,ter,mean_r\n")
        for kind, ter, r in rows:
            fh.write(f"{kind},{ter:.6f},{r:.6f}\n")
    write_manifest(out, "compare", None, args.seed or 0, ["compare.csv"],
                   inputs={f"checkpoint{i}": file_sha256(c)
                           for i, c in enumerate(args.checkpoints)}
                   | {"data": file_sha256(args.data)})
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_experiment(args)
    lines = []
    ok = True
    for kind in streaming.MECHANISMS:
        rep = mechanism_grad_check(kind, seed=cfg.seed)
        ok &= rep.ok
        lines.append(f"weights[{kind}]: {rep.summary()}")
    rep = attention_grad_check(seed=cfg.seed)
    ok &= rep.ok
    lines.append(f"attention-core: {rep.summary()}")
    model = Model(cfg.model, seed=cfg.seed)
    utt = gen_toy_dataset(cfg.task, 1, split_seed=99)[0]
    rep = model_grad_check(model, utt, eps=cfg.train.label_smoothing,
                           per_group=1, seed=cfg.seed)
    ok &= rep.ok
    lines.append(f"model-loss: {rep.summary()}")
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.txt").write_text(text)
        write_manifest(out, "gradcheck", cfg, cfg.seed, ["gradcheck.txt"])
    _log(text.rstrip())
    if not ok:
        raise RuntimeError("gradient check failed")
    return 0


def cmd_render(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for dump in args.dumps:
        dump = Path(dump)
        mats = metrics.attention_load(dump)
        for (l, h), mat in sorted(mats.items()):
            fig, ax = plt.subplots(figsize=(6, 3))
            ax.imshow(mat, aspect="auto", origin="lower", cmap="viridis",
                      interpolation="nearest")
            ax.set_xlabel("encoder frame")
            ax.set_ylabel("output step")
            ax.set_title(f"{dump.name} layer {l} head {h}")
            name = f"{dump.name}_l{l}_h{h}.png"
            fig.savefig(out / name, dpi=120, bbox_inches="tight")
            plt.close(fig)
            outputs.append(name)
        _log(f"render: {dump} -> {len(mats)} heatmaps")
    write_manifest(out, "render", None, args.seed or 0, outputs)
    return 0


def _add_common(sub, *, config=False, data=False, checkpoint=False, out=True):
    if config:
        sub.add_argument("--config", required=True, help="experiment config JSON")
    if data:
        sub.add_argument("--data", required=True, help="dataset file or directory")
    if checkpoint:
        sub.add_argument("--checkpoint", required=True, help="model checkpoint (.npz)")
    if out:
        sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override config seed")
    sub.add_argument("--threads", type=int, default=1,
                     help="worker threads across utterances (1 = deterministic order)")


def _add_decode_flags(sub):
    sub.add_argument("--mechanism", choices=list(streaming.MECHANISMS), default=None)
    sub.add_argument("--max-lookahead", default=None, metavar="N|inf")
    sub.add_argument("--chunk-window", type=int, default=None, metavar="N")
    sub.add_argument("--beam", type=int, default=1)
    sub.add_argument("--max-len", type=int, default=24)


def build_parser() -> _Parser:
    parser = _Parser(prog="dacs", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen", help="generate toy datasets")
    _add_common(p, config=True)
    p.set_defaults(func=cmd_gen)

    p = subs.add_parser("train", help="train a model")
    _add_common(p, config=True, data=True)
    p.add_argument("--mechanism", choices=list(streaming.MECHANISMS), default=None)
    p.add_argument("--max-lookahead", default=None, metavar="N|inf")
    p.add_argument("--chunk-window", type=int, default=None, metavar="N")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("decode", help="decode a dataset")
    _add_common(p, checkpoint=True, data=True)
    _add_decode_flags(p)
    p.add_argument("--dump-attn", type=int, default=1,
                   help="dump attention matrices for the first N utterances")
    p.set_defaults(func=cmd_decode)

    p = subs.add_parser("sweep-m", help="decode at several maximum look-ahead steps")
    _add_common(p, checkpoint=True, data=True)
    p.add_argument("--m-list", required=True,
                   help="comma-separated look-ahead values, e.g. inf,16,8,4")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, default=24)
    p.set_defaults(func=cmd_sweep_m)

    p = subs.add_parser("compare", help="decode several checkpoints and tabulate")
    _add_common(p, data=True)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--max-len", type=int, default=24)
    p.set_defaults(func=cmd_compare)

    p = subs.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p, config=True, out=False)
    p.add_argument("--out", default=None, help="optional report directory")
    p.set_defaults(func=cmd_gradcheck)

    p = subs.add_parser("render", help="render attention dumps as heatmaps")
    _add_common(p)
    p.add_argument("--dumps", nargs="+", required=True,
                   help="attention dump directories from decode")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
