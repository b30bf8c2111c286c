"""Command-line entry point.

Subcommands: train, generate, verify, bench-cache, ricci, norm-probe,
inspect-checkpoint.  Exit codes: 0 success, 1 verification failure,
2 usage/config/parse error.  Set HELM_DEBUG_MANIFOLD=1 to enable
per-layer manifold assertions in any command.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import tokenizer
from .checkpoint import atomic_write_bytes, is_checkpoint, load_checkpoint
from .model import LanguageModel, ModelConfig, norm_probe
from .ricci import curvature_report, parse_embeddings
from .training import TrainSettings, load_corpus, restore_model, train_loop
from .verify import CHECKS, attention_peak_distance, run_checks

USAGE_ERROR = 2
VERIFY_ERROR = 1


class CliError(Exception):
    """Configuration or input problem; maps to exit code 2."""


def _load_config(path) -> ModelConfig:
    try:
        return ModelConfig.from_json(path)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(f"bad config {path}: {exc}")


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    try:
        corpus = load_corpus(args.corpus)
    except FileNotFoundError as exc:
        raise CliError(str(exc))
    settings = TrainSettings(steps=args.steps, batch_size=args.batch_size,
                             seq_len=args.seq_len, learning_rate=args.lr,
                             checkpoint_every=args.checkpoint_every)
    model = LanguageModel(cfg)
    summary = train_loop(model, corpus, args.out, settings, quiet=args.quiet)
    print(f"final loss {summary['final_loss']:.4f}; "
          f"metrics at {summary['metrics_path']}")
    return 0


def cmd_generate(args) -> int:
    if not is_checkpoint(args.ckpt):
        raise CliError(f"not a checkpoint: {args.ckpt}")
    model = restore_model(args.ckpt)
    prompt_ids = tokenizer.encode(args.prompt)
    ids = model.generate(prompt_ids, args.n, use_cache=args.cache)
    print(tokenizer.decode(ids))
    return 0


def cmd_verify(args) -> int:
    numbers = sorted(CHECKS) if args.all or args.prop is None else [args.prop]
    if args.prop == 3 and args.r is not None:
        peak = attention_peak_distance(args.r, seed=0)
        print(f"constructed key aligned at distance {args.r}: "
              f"attention peaks at relative distance {peak}")
        return 0 if peak == args.r else VERIFY_ERROR
    results = run_checks(numbers)
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else VERIFY_ERROR


def cmd_bench_cache(args) -> int:
    from .attention import cache_report

    cfg = _load_config(args.config)
    latent_kv = cfg.latent_kv if cfg.latent_kv else cfg.model_dim // 2
    rope_dim = cfg.rope_head_dim if cfg.rope_head_dim else cfg.head_dim // 2
    rows = cache_report(cfg.layers, cfg.heads, cfg.head_dim, latent_kv, rope_dim)
    lines = ["layer,baseline_scalars,hmla_scalars,ratio"]
    lines += [f"{r.layer},{r.baseline_scalars},{r.hmla_scalars},{r.ratio!r}"
              for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_bytes(args.out, text.encode())
    print(text, end="")
    baseline = rows[0].baseline_scalars
    compressed = rows[0].hmla_scalars
    print(f"# space scalars/token/layer: {baseline} -> {compressed} "
          f"(x{rows[0].ratio:.2f}); with time coords: "
          f"{baseline + 2 * cfg.heads} -> {compressed + 2}")
    return 0


def cmd_ricci(args) -> int:
    path = Path(args.input)
    if not path.exists():
        raise CliError(f"input not found: {args.input}")
    try:
        if is_checkpoint(path):
            _, arrays = load_checkpoint(path)
            if args.tensor not in arrays:
                raise CliError(f"tensor {args.tensor!r} not in checkpoint "
                               f"(has: {', '.join(sorted(arrays)[:8])}...)")
            emb = arrays[args.tensor]
        else:
            emb = parse_embeddings(path)
    except ValueError as exc:
        raise CliError(f"parse error in {args.input}: {exc}")
    try:
        summary = curvature_report(emb, args.k, args.bins, args.out,
                                   warn=lambda msg: print(f"warning: {msg}",
                                                          file=sys.stderr))
    except ValueError as exc:
        raise CliError(str(exc))
    print(f"{summary['edges']} edges; kappa mean {summary['mean']:.4f} "
          f"min {summary['min']:.4f} max {summary['max']:.4f} "
          f"negative {summary['fraction_negative']:.1%}")
    return 0


def cmd_norm_probe(args) -> int:
    if not is_checkpoint(args.ckpt):
        raise CliError(f"not a checkpoint: {args.ckpt}")
    model = restore_model(args.ckpt)
    groups = [[w for w in grp.split(",") if w] for grp in args.words.split(";")]
    groups = [g for g in groups if g]
    if not groups:
        raise CliError("no words given")
    rows = norm_probe(model, groups)
    lines = ["group,avg_norm,min,max"]
    lines += [f"\"{g}\",{avg!r},{lo!r},{hi!r}" for g, avg, lo, hi in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_bytes(args.out, text.encode())
    print(text, end="")
    return 0


def cmd_inspect(args) -> int:
    if not is_checkpoint(args.ckpt):
        raise CliError(f"not a checkpoint: {args.ckpt}")
    header, arrays = load_checkpoint(args.ckpt)
    print(f"step {header['step']}, variant {header['config']['variant']}")
    total = 0
    for name in sorted(arrays):
        arr = arrays[name]
        total += arr.size
        print(f"  {name}: shape {tuple(arr.shape)}")
    print(f"total scalars: {total}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperlm",
                                     description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a byte corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--out", default="runs/run")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="greedy decoding from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--cache", action=argparse.BooleanOptionalAction, default=False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("verify", help="run the numerical property checks")
    p.add_argument("--prop", type=int, choices=sorted(CHECKS))
    p.add_argument("--all", action="store_true")
    p.add_argument("--r", type=int, help="report the peak distance for check 3")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench-cache", help="per-layer KV-cache size table")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench_cache)

    p = sub.add_parser("ricci", help="Ollivier-Ricci curvature report")
    p.add_argument("--input", required=True,
                   help="text embeddings (one vector per line) or a checkpoint")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--tensor", default="embedding.space",
                   help="tensor name when --input is a checkpoint")
    p.set_defaults(func=cmd_ricci)

    p = sub.add_parser("norm-probe", help="final-layer norm stats per word group")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--words", required=True,
                   help="semicolon-separated groups of comma-separated words")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_norm_probe)

    p = sub.add_parser("inspect-checkpoint", help="list checkpoint contents")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
