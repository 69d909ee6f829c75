"""Command line entry point: gen-data, train, eval, retrieve, inspect.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure (training diverged).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml

from . import __version__
from .datagen import GenConfig
from .errors import (
    ConfigurationError,
    DataError,
    DivergenceError,
    FitNetError,
    FormatError,
    InvalidArgumentError,
    StratumExhaustedError,
    UnknownItemError,
    VersionError,
)
from .sampling import DEFAULT_SETTING

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("fitnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# (flag, config section, config key, type, default, help)
Flag = tuple[str, str, str, Callable, Any, str]

COMMON: list[Flag] = [
    ("--seed", "", "seed", int, 7, "master random seed"),
]

DATA_FLAGS: list[Flag] = [
    ("--users", "data", "n_users", int, 2000, "number of users"),
    ("--items", "data", "n_items", int, 5000, "number of items in the pool"),
    ("--cities", "data", "n_cities", int, GenConfig.n_cities, "number of cities"),
    ("--categories", "data", "n_categories", int, GenConfig.n_categories, "number of item categories"),
]

TRAIN_FLAGS: list[Flag] = [
    ("--epochs", "train", "epochs", int, 10, "training epochs"),
    ("--batch-size", "train", "batch_size", int, 64, "instances per mini-batch"),
    ("--lr", "train", "learning_rate", float, 1e-3, "learning rate"),
    ("--setting", "sampling", "setting", int, DEFAULT_SETTING, "negative sampling setting 1, 2 or 3"),
    ("--ratio", "sampling", "ratio", int, 10, "negatives per positive"),
]


def _csv(kind: Callable):
    def parse(text: str):
        try:
            values = [kind(v.strip()) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
        if not values:
            raise argparse.ArgumentTypeError("empty list")
        return values

    return parse


def _add_flags(p: argparse.ArgumentParser, flags: Sequence[Flag]) -> None:
    for flag, _, _, kind, default, text in flags:
        p.add_argument(flag, type=kind, default=None, help=f"{text} (default: {default})")


def _add_runtime(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="YAML config file (default: none)")
    p.add_argument(
        "--threads", type=int, default=None,
        help="worker threads (default: $FITNET_THREADS, else available cores)",
    )
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch progress (default: off)")


def build_parser() -> argparse.ArgumentParser:
    from .evaluation import K_GRID, METHODS

    parser = _Parser(prog="fitnet", description="Itinerary-aware two-tower matching: data, training, evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    _add_flags(p, COMMON + DATA_FLAGS)
    p.add_argument("--out", type=Path, required=True, help="output directory (required)")
    _add_runtime(p)

    p = sub.add_parser("train", help="train models and write checkpoints")
    _add_flags(p, COMMON + TRAIN_FLAGS)
    p.add_argument("--data", type=Path, required=True, help="corpus directory from gen-data (required)")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path for the first method (required)")
    p.add_argument(
        "--methods", type=_csv(str), default=None,
        help="trainable methods; the first goes to --out, others to OUT.<method>.ckpt "
        "(default: fitnet,fitnet-minus,avgpool)",
    )
    _add_runtime(p)

    p = sub.add_parser("eval", help="compare methods on the held-out split")
    _add_flags(p, COMMON)
    p.add_argument("--ckpt", type=Path, required=True, help="checkpoint written by train (required)")
    p.add_argument("--corpus", type=Path, required=True, help="corpus directory (required)")
    p.add_argument("--ks", type=_csv(int), default=None, help=f"cutoffs (default: {','.join(map(str, K_GRID))})")
    p.add_argument("--methods", type=_csv(str), default=None, help=f"methods (default: {','.join(METHODS)})")
    p.add_argument("--report", type=Path, default=None, help="also write results.csv and PNG figures here (default: none)")
    _add_runtime(p)

    p = sub.add_parser("retrieve", help="top-k items for one user")
    _add_flags(p, COMMON)
    p.add_argument("--ckpt", type=Path, required=True, help="checkpoint (required)")
    p.add_argument("--corpus", type=Path, required=True, help="corpus directory (required)")
    p.add_argument("--user", required=True, help="user id (required)")
    p.add_argument("--k", type=int, default=None, help="number of items (default: 10)")
    _add_runtime(p)

    p = sub.add_parser("inspect", help="describe a checkpoint")
    p.add_argument("ckpt", type=Path, help="checkpoint path")
    _add_runtime(p)
    return parser


# --------------------------------------------------------------------------
# effective configuration
# --------------------------------------------------------------------------


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping of sections")
    unknown = set(data) - {"seed", "threads", "data", "model", "sampling", "train"}
    if unknown:
        raise UsageError(f"config {path}: unknown sections {sorted(unknown)}")
    return data


def _resolve(args, flags: Sequence[Flag], cfg: dict) -> dict:
    """Flag value, else config file value, else built-in default, per section."""
    out: dict[str, dict] = {"": {}, "data": {}, "model": {}, "sampling": {}, "train": {}}
    for section in ("data", "model", "sampling", "train"):
        block = cfg.get(section) or {}
        if not isinstance(block, dict):
            raise UsageError(f"config section {section!r} must be a mapping")
        out[section].update(block)
    if "seed" in cfg:
        out[""]["seed"] = cfg["seed"]
    for flag, section, key, _, default, _ in flags:
        value = getattr(args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            out[section][key] = value
        elif key not in out[section] and default is not None:
            out[section][key] = default
    return out


def resolve_threads(flag: int | None, cfg: dict) -> int:
    if flag is not None:
        if flag < 1:
            raise UsageError("--threads must be >= 1")
        return flag
    if "threads" in cfg:
        return max(1, int(cfg["threads"]))
    env = os.environ.get("FITNET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"FITNET_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _print_config(command: str, config: dict) -> None:
    print(f"# fitnet {command} effective config: {json.dumps(config, sort_keys=True, default=str)}", file=sys.stderr)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen_data(args, cfg: dict) -> int:
    from .datagen import GenConfig, generate, write_corpus

    eff = _resolve(args, COMMON + DATA_FLAGS, cfg)
    data = dict(eff["data"])
    data["seed"] = eff[""]["seed"]
    gen = GenConfig.from_dict(data)
    _print_config("gen-data", {"data": gen.to_dict(), "out": str(args.out)})
    corpus = generate(gen)
    manifest = write_corpus(corpus, args.out)
    c = manifest["counts"]
    print(
        f"wrote {args.out}: {c['items']} items, {c['train_instances']} train / "
        f"{c['test_instances']} test instances, content hash {manifest['content_hash']}"
    )
    return EXIT_OK


def _companion(path: Path, method: str) -> Path:
    return path.with_name(f"{path.stem}.{method}{path.suffix or '.ckpt'}")


def cmd_train(args, cfg: dict) -> int:
    from .checkpoint import save_checkpoint
    from .datagen import load_corpus
    from .features import build_vocabularies
    from .model import METHOD_VARIANTS, ModelConfig, config_for_method
    from .sampling import ItemPool, SamplingPolicy
    from .training import TrainConfig, train

    eff = _resolve(args, COMMON + TRAIN_FLAGS, cfg)
    seed = eff[""]["seed"]
    methods = args.methods or ["fitnet", "fitnet-minus", "avgpool"]
    for m in methods:
        if m not in METHOD_VARIANTS:
            raise UsageError(f"unknown trainable method {m!r} (choose from {', '.join(METHOD_VARIANTS)})")
    if len(set(methods)) != len(methods):
        raise UsageError("--methods lists a method twice")
    model_cfg = dict(eff["model"])
    model_cfg.setdefault("seed", seed)
    base = ModelConfig.from_dict(model_cfg)
    samp = dict(eff["sampling"])
    samp.setdefault("seed", seed)
    policy = SamplingPolicy(**samp)
    tc = dict(eff["train"])
    tc.setdefault("seed", seed)
    train_cfg = TrainConfig(**tc)
    outputs = {m: (args.out if i == 0 else _companion(args.out, m)) for i, m in enumerate(methods)}
    _print_config(
        "train",
        {
            "data": str(args.data),
            "methods": methods,
            "outputs": {m: str(p) for m, p in outputs.items()},
            "model": base.to_dict(),
            "sampling": dataclasses.asdict(policy),
            "train": train_cfg.to_dict(),
        },
    )
    corpus = load_corpus(args.data)
    pool = ItemPool(corpus.items)
    vocabs = build_vocabularies(corpus.train, corpus.items)
    for m in methods:
        def progress(epoch, value, m=m):
            if not args.quiet:
                print(f"[{m}] epoch {epoch}/{train_cfg.epochs} mean loss {value:.6f}", file=sys.stderr, flush=True)

        result = train(corpus.train, pool, config_for_method(base, m), policy, train_cfg, vocabs=vocabs, on_epoch=progress)
        digest = save_checkpoint(
            result.model,
            outputs[m],
            {
                "method": m,
                "epoch": result.epochs_run,
                "final_loss": result.history[-1],
                "history": result.history,
                "sampling": dataclasses.asdict(policy),
                "train": train_cfg.to_dict(),
            },
        )
        print(f"{m}\t{outputs[m]}\tfinal_loss={result.history[-1]:.6f}\tsha256={digest}")
    return EXIT_OK


def _load_models(ckpt: Path, methods: Sequence[str]) -> dict:
    from .checkpoint import load_checkpoint

    first, meta = load_checkpoint(ckpt)
    models = {meta.get("method", "fitnet"): first}
    for m in methods:
        if m == "orderdest2i" or m in models:
            continue
        path = _companion(ckpt, m)
        if not path.exists():
            raise DataError(f"method {m!r} has no trained model (expected {path})")
        model, _ = load_checkpoint(path)
        models[m] = model
    return models


def cmd_eval(args, cfg: dict) -> int:
    from .datagen import load_corpus
    from .evaluation import K_GRID, METHODS, format_summary, format_table, run_comparison

    eff = _resolve(args, COMMON, cfg)
    ks = args.ks or list(K_GRID)
    methods = args.methods or list(METHODS)
    known = set(METHODS) | {"var1", "var2", "var3"}
    for m in methods:
        if m not in known:
            raise UsageError(f"unknown method {m!r}")
    if any(k < 1 for k in ks):
        raise UsageError("--ks must be positive")
    threads = resolve_threads(args.threads, cfg)
    _print_config(
        "eval",
        {"ckpt": str(args.ckpt), "corpus": str(args.corpus), "ks": ks, "methods": methods,
         "report": str(args.report) if args.report else None, "seed": eff[""]["seed"], "threads": threads},
    )
    models = _load_models(args.ckpt, methods)
    corpus = load_corpus(args.corpus)
    reports = run_comparison(corpus.train, corpus.test, corpus.items, models, methods, ks, threads=threads)
    table = format_table(reports)
    sys.stdout.write(table)
    sys.stdout.write("\n")
    sys.stdout.write(format_summary(reports))
    if args.report is not None:
        from .plotting import write_report_figures

        args.report.mkdir(parents=True, exist_ok=True)
        (args.report / "results.csv").write_text(table, encoding="utf-8")
        figures = write_report_figures(reports, args.report)
        print(f"# report written to {args.report}: results.csv, {', '.join(p.name for p in figures)}", file=sys.stderr)
    return EXIT_OK


def cmd_retrieve(args, cfg: dict) -> int:
    from .checkpoint import load_checkpoint
    from .datagen import load_corpus
    from .retrieval import build_index, retrieve_top_k

    eff = _resolve(args, COMMON, cfg)
    k = args.k if args.k is not None else 10
    _print_config("retrieve", {"ckpt": str(args.ckpt), "corpus": str(args.corpus), "user": args.user, "k": k,
                               "seed": eff[""]["seed"]})
    model, _ = load_checkpoint(args.ckpt)
    corpus = load_corpus(args.corpus)
    user = next((i for i in [*corpus.test, *corpus.train] if i.user_id == args.user), None)
    if user is None:
        raise DataError(f"user {args.user!r} not found in {args.corpus}")
    if not 1 <= k <= len(corpus.items):
        raise UsageError(f"--k must lie in [1, {len(corpus.items)}]")
    index = build_index(corpus.items, model)
    for item_id, score in retrieve_top_k(user.with_target(None), index, k, model):
        print(f"{item_id}\t{score:.10g}")
    return EXIT_OK


def cmd_inspect(args, cfg: dict) -> int:
    from .checkpoint import describe

    _print_config("inspect", {"ckpt": str(args.ckpt)})
    info = describe(args.ckpt)
    print(f"format_version\t{info['format_version']}")
    print(f"sha256\t{info['sha256']}")
    print(f"parameter_count\t{info['parameter_count']}")
    for name, shape in info["shapes"].items():
        print(f"shape\t{name}\t{'x'.join(map(str, shape))}")
    print(f"model_config\t{json.dumps(info['model_config'], sort_keys=True)}")
    print(f"metadata\t{json.dumps(info['metadata'], sort_keys=True)}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "inspect": cmd_inspect,
}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_config(getattr(args, "config", None))
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, InvalidArgumentError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, VersionError, UnknownItemError, StratumExhaustedError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FitNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc.filename}: not found", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
