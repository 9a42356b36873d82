"""Batch command-line interface.

Subcommands: ``stats``, ``train``, ``evaluate``, ``recommend``,
``gradcheck``. Run configuration is JSON (unknown keys are rejected);
every command writes results to stdout and diagnostics to stderr.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 checkpoint error, 4 gradient-check failure.
"""

import argparse
import json
import sys
from dataclasses import dataclass, fields

from . import checkpoint as ckpt
from . import data as datamod
from .checkpoint import CheckpointError
from .data import DataError
from .evaluation import evaluate
from .model import ModelConfig, init_model
from .numerics import STREAM_GRADCHECK, STREAM_INIT, STREAM_SPLIT, SeededRng
from .training import TrainConfig, fit, grad_check

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECKPOINT = 3
EXIT_GRADCHECK = 4


class ConfigError(Exception):
    """Bad run configuration (unknown key, wrong type, out-of-range value)."""


@dataclass
class RunConfig:
    model: str = "dain"
    embedding_dim: int = 64
    layers: tuple = (128, 64, 32)
    activation: str = "relu"
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 30
    seed: int = 42
    context_enabled: bool = True
    eval_negatives: int = 99
    k: int = 10
    data_format: str = "movielens"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            kind=self.model,
            embedding_dim=self.embedding_dim,
            hidden_layers=tuple(self.layers),
            context_enabled=self.context_enabled,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )


def config_from_dict(raw: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    merged = dict(raw)
    if merged.get("model", "dain") == "mf":
        merged.setdefault("context_enabled", False)

    def want(key, types, check=None, why=""):
        if key not in merged:
            return
        val = merged[key]
        if isinstance(val, bool) and bool not in types:
            raise ConfigError(f"config key {key!r}: expected {why}, got {val!r}")
        if not isinstance(val, types) or (check and not check(val)):
            raise ConfigError(f"config key {key!r}: expected {why}, got {val!r}")

    want("model", (str,), lambda v: v in ("dain", "mf"), "one of 'dain', 'mf'")
    want("embedding_dim", (int,), lambda v: v >= 1, "an integer >= 1")
    want("layers", (list,), lambda v: v and all(isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in v),
         "a nonempty list of integers >= 1")
    want("activation", (str,), lambda v: v == "relu", "the fixed value 'relu'")
    want("learning_rate", (int, float), lambda v: v > 0, "a positive number")
    want("batch_size", (int,), lambda v: v >= 1, "an integer >= 1")
    want("epochs", (int,), lambda v: v >= 1, "an integer >= 1")
    want("seed", (int,), None, "an integer")
    want("context_enabled", (bool,), None, "a boolean")
    want("eval_negatives", (int,), lambda v: v >= 1, "an integer >= 1")
    want("k", (int,), lambda v: v >= 1, "an integer >= 1")
    want("data_format", (str,), lambda v: v in ("movielens", "tsv"), "one of 'movielens', 'tsv'")
    if "layers" in merged:
        merged["layers"] = tuple(merged["layers"])
    if "learning_rate" in merged:
        merged["learning_rate"] = float(merged["learning_rate"])
    cfg = RunConfig(**merged)
    if cfg.model == "mf" and cfg.context_enabled:
        raise ConfigError("config key 'context_enabled': the mf model has no context path")
    return cfg


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "rb") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(raw)


def _load_log(path, data_format: str) -> datamod.InteractionLog:
    try:
        f = open(path, "rb")
    except OSError as e:
        raise DataError(f"{path}: {e.strerror or e}") from None
    with f:
        try:
            if data_format == "movielens":
                return datamod.parse_movielens(f)
            has_header = _tsv_has_header(path)
            return datamod.parse_tsv(f, has_header=has_header)
        except DataError as e:
            raise DataError(f"{path}: {e}") from None
        except UnicodeDecodeError as e:
            raise DataError(f"{path}: undecodable bytes ({e.reason})") from None


def _tsv_has_header(path) -> bool:
    """A TSV starts with a header iff its first row's rating/timestamp
    columns do not parse as numbers."""
    with open(path, "rb") as f:
        first = f.readline().decode("utf-8", errors="replace").rstrip("\r\n")
    parts = first.split("\t")
    if len(parts) != 4:
        return False
    try:
        float(parts[2])
        int(parts[3])
        return False
    except ValueError:
        return True


def _build_dataset(path, data_format):
    return datamod.build_dataset(_load_log(path, data_format))


def cmd_stats(args) -> int:
    ds, _, _ = _build_dataset(args.data, args.format)
    print(datamod.stats(ds).line())
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    fmt = args.format or cfg.data_format
    ds, user_map, item_map = _build_dataset(args.data, fmt)
    split = datamod.leave_one_out_split(ds, cfg.eval_negatives, SeededRng(cfg.seed, STREAM_SPLIT))
    model = init_model(cfg.model_config(), ds.num_users, ds.num_items, SeededRng(cfg.seed, STREAM_INIT))
    _, trace = fit(model, split.train, cfg.train_config())
    for st in trace:
        print(f"epoch={st.epoch_index} loss={st.mean_train_loss}")
    try:
        ckpt.save_checkpoint(model, user_map, item_map, cfg.seed, args.out)
    except OSError as e:
        raise CheckpointError(f"{args.out}: {e.strerror or e}") from None
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, user_map, item_map, ckpt_seed = ckpt.load_checkpoint(args.checkpoint)
    ds, data_user_map, data_item_map = _build_dataset(args.data, args.format)
    if user_map != data_user_map or item_map != data_item_map:
        raise DataError(
            f"checkpoint id space ({len(user_map)} users x {len(item_map)} items) does not "
            f"match the data file ({len(data_user_map)} users x {len(data_item_map)} items)"
        )
    seed = args.seed if args.seed is not None else ckpt_seed
    split = datamod.leave_one_out_split(ds, args.negatives, SeededRng(seed, STREAM_SPLIT))
    report = evaluate(model, split, args.k)
    print(report.to_json())
    return EXIT_OK


def cmd_recommend(args) -> int:
    model, user_map, item_map, _ = ckpt.load_checkpoint(args.checkpoint)
    if args.user not in user_map:
        raise ConfigError(f"unknown user {args.user!r}")
    u = user_map.index(args.user)
    if model.uses_context:
        if args.hour is None or args.weekday is None:
            raise ConfigError("this model needs --hour and --weekday")
        if not (0 <= args.hour <= 23 and 0 <= args.weekday <= 6):
            raise ConfigError("--hour must be in 0..23 and --weekday in 0..6")
        ctx = (args.hour, args.weekday)
    else:
        if args.hour is not None or args.weekday is not None:
            raise ConfigError("this model takes no --hour/--weekday")
        ctx = None
    excluded = set()
    if args.data:
        log = _load_log(args.data, args.format)
        for rec in log.records:
            if rec.user == args.user and rec.item in item_map:
                excluded.add(item_map.index(rec.item))
    candidates = [i for i in range(model.num_items) if i not in excluded]
    if args.n > 0 and candidates:
        scores = model.predict_batch(u, candidates, ctx)
        order = sorted(range(len(candidates)), key=lambda j: (-scores[j], candidates[j]))
        for rank, j in enumerate(order[: args.n], start=1):
            print(f"{rank} {item_map.raw(candidates[j])} {scores[j]}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = load_run_config(args.config)
        model_cfg = cfg.model_config()
    else:
        model_cfg = ModelConfig(kind="dain", embedding_dim=4, hidden_layers=(8, 4), context_enabled=True)
    rng = SeededRng(args.seed, STREAM_GRADCHECK)
    num_users, num_items = 6, 9
    model = init_model(model_cfg, num_users, num_items, rng)
    u = rng.randrange(num_users)
    i = rng.randrange(num_items)
    ctx = (rng.randrange(24), rng.randrange(7)) if getattr(model, "uses_context", False) else None
    target = rng.random()
    err = grad_check(model, (u, i, ctx, target), eps=1e-5, grad_scale=args.grad_scale)
    print(f"max_rel_err={err}")
    return EXIT_OK if err < 1e-4 else EXIT_GRADCHECK


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; this CLI reserves 2
    for data errors, so remap usage problems to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dain", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="print dataset statistics")
    p.add_argument("--data", required=True, help="interaction log file")
    p.add_argument("--format", choices=("movielens", "tsv"), default="movielens")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", help="JSON run configuration (defaults used when omitted)")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("movielens", "tsv"), default=None,
                   help="overrides the config's data_format")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="leave-one-out ranking metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("movielens", "tsv"), default="movielens")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--negatives", type=int, default=99)
    p.add_argument("--seed", type=int, default=None,
                   help="split seed (defaults to the seed recorded in the checkpoint)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-n items for one user")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", required=True, help="raw user id")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--hour", type=int, default=None)
    p.add_argument("--weekday", type=int, default=None)
    p.add_argument("--data", help="interaction log used to exclude already-seen items")
    p.add_argument("--format", choices=("movielens", "tsv"), default="movielens")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("gradcheck", help="compare backward against finite differences")
    p.add_argument("--config", help="optional JSON run configuration")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--grad-scale", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"dain: config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"dain: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as e:
        print(f"dain: checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ValueError as e:
        print(f"dain: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
