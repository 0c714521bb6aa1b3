"""Command-line surface: gen-data, train, eval, bench, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import replace
from pathlib import Path

from .bench import format_table, matrix_to_dict, run_matrix
from .checkpoint import (CheckpointFormatError, load_checkpoint, restore,
                         save_checkpoint)
from .evaluation import evaluate
from .gradcheck import full_model_gradcheck
from .metrics import MetricsWriter
from .model import init_model
from .synthdata import DatasetFormatError, DatasetSpec, generate, load_dataset, save_dataset
from .tensor import NumericError
from .trainer import (OptimizerState, TrainConfig, dims_for, finetune_stage,
                      pretrain_stage)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ConfigError(ValueError):
    """The experiment config file is malformed or has unknown keys."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_config_file(path) -> dict:
    """`key = value` lines, UTF-8, with # comments."""
    values = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key or not value:
                raise ConfigError(f"{path}:{lineno}: empty key or value")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
    return values


def _coerce(key: str, value: str, target_type):
    try:
        if target_type is bool:
            low = value.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(value)
        return target_type(value)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} "
                          f"as {target_type.__name__}") from exc


def load_train_config(path) -> TrainConfig:
    """Build a TrainConfig from a config file; unknown keys are hard errors."""
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    cfg = TrainConfig()
    for key, value in parse_config_file(path).items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        cfg = replace(cfg, **{key: _coerce(key, value, types[fields[key]])})
    cfg.validate()
    return cfg


def _build_parser() -> _Parser:
    parser = _Parser(prog="cmmp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic paired-modality dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--shape-classes", type=int, default=4)
    g.add_argument("--motion-classes", type=int, default=3)
    g.add_argument("--train-per-class", type=int, default=100)
    g.add_argument("--test-per-class", type=int, default=50)
    g.add_argument("--frames", type=int, default=40)
    g.add_argument("--a-dim", type=int, default=24)
    g.add_argument("--m-dim", type=int, default=12)
    g.add_argument("--window", type=int, default=5)
    g.add_argument("--noise", type=float, default=0.3)
    g.add_argument("--motion-scale", type=float, default=8.0)
    g.add_argument("--crosstalk", type=float, default=0.5)

    t = sub.add_parser("train", help="run one or both training stages")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--stage", choices=("pretrain", "finetune", "both"), default="both")
    t.add_argument("--ckpt", help="checkpoint to fine-tune from or resume")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--t-steps", type=int, default=8)
    e.add_argument("--window", type=int, default=5)

    b = sub.add_parser("bench", help="run the six-cell fusion/objective matrix")
    b.add_argument("--data", required=True)
    b.add_argument("--config")
    b.add_argument("--seeds", default="1,2,3", help="comma-separated seed list")
    b.add_argument("--out", required=True)
    b.add_argument("--quiet", action="store_true")

    c = sub.add_parser("gradcheck", help="verify backward against central differences")
    c.add_argument("--seed", type=int, default=4)
    c.add_argument("--tol", type=float, default=1e-6)
    c.add_argument("--dims", default="t=3,d=4,h=4,c=3,b=2",
                   help="t=steps,d=feat,h=lstm hidden,c=classes,b=batch")
    return parser


def _cmd_gen_data(args) -> int:
    spec = DatasetSpec(
        shape_classes=args.shape_classes, motion_classes=args.motion_classes,
        train_per_class=args.train_per_class, test_per_class=args.test_per_class,
        frames=args.frames, a_dim=args.a_dim, m_dim=args.m_dim, window=args.window,
        noise=args.noise, motion_scale=args.motion_scale, crosstalk=args.crosstalk,
        seed=args.seed,
    )
    save_dataset(generate(spec), args.out)
    print(f"wrote {args.out}: {spec.classes} classes, "
          f"{spec.classes * spec.train_per_class} train / "
          f"{spec.classes * spec.test_per_class} test samples")
    return EXIT_OK


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = MetricsWriter(out_dir / "metrics.jsonl")

    if args.ckpt:
        ck = load_checkpoint(args.ckpt)
        model, state = restore(ck)
        start = ck.iteration if ck.stage == "finetune" else 0
    else:
        model = init_model(cfg.seed, dims_for(dataset, cfg), cfg.fusion_mode)
        state, start = OptimizerState.zeros(model), 0

    if args.stage in ("pretrain", "both"):
        if args.ckpt:
            raise UsageError("--ckpt only applies to --stage finetune")
        pretrain_stage(model, dataset, cfg, state, on_record=writer.write)
        save_checkpoint(model, state, "pretrain", cfg.pretrain_iters,
                        out_dir / "pretrained.ckpt")
        print(f"pretraining done -> {out_dir / 'pretrained.ckpt'}")
    if args.stage in ("finetune", "both"):
        if args.stage == "finetune" and not args.ckpt:
            raise UsageError("--stage finetune needs --ckpt with pretrained weights")
        if args.stage == "both":
            state = OptimizerState.zeros(model)
        finetune_stage(model, dataset, cfg, state, start_iter=start,
                       on_record=writer.write)
        save_checkpoint(model, state, "finetune", cfg.finetune_iters,
                        out_dir / "final.ckpt")
        print(f"fine-tuning done -> {out_dir / 'final.ckpt'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    model, _ = restore(load_checkpoint(args.ckpt))
    res = evaluate(model, dataset.test, args.t_steps, args.window)
    print(json.dumps({
        "acc_spatial": res.acc_spatial, "acc_temporal": res.acc_temporal,
        "acc_fused": res.acc_fused, "L_a": res.losses.l_a, "L_m": res.losses.l_m,
        "count": res.count,
    }))
    return EXIT_OK


def _cmd_bench(args) -> int:
    dataset = load_dataset(args.data)
    cfg = load_train_config(args.config) if args.config else TrainConfig()
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--seeds must be comma-separated integers: {exc}") from exc
    progress = None if args.quiet else lambda msg: print(msg, flush=True)
    result = run_matrix(dataset, cfg, seeds, progress=progress)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(matrix_to_dict(result), f, indent=2)
    print(format_table(result))
    print(f"wrote {args.out} ({result.wall_ms / 1000.0:.1f}s)")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    keys = {"t": "t_steps", "d": "feat_dim", "h": "lstm_hidden", "c": "classes",
            "b": "batch", "pa": "a_dim", "pm": "m_dim", "e": "enc_hidden"}
    kwargs = {}
    for part in args.dims.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise UsageError(f"--dims entries look like t=3, got {part!r}")
        key, _, value = part.partition("=")
        if key.strip().lower() not in keys:
            raise UsageError(f"unknown --dims key {key!r} (valid: {', '.join(keys)})")
        kwargs[keys[key.strip().lower()]] = int(value)
    result = full_model_gradcheck(seed=args.seed, **kwargs)
    status = "PASS" if result.passed(args.tol) else "FAIL"
    print(f"{status}: max mixed error {result.max_error:.3e} over "
          f"{result.param_count} parameters (tol {args.tol:.1e}, "
          f"loss gap {result.loss_gap:.3e}, worst {result.worst_param})")
    return EXIT_OK if result.passed(args.tol) else EXIT_NUMERIC


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "gen-data": _cmd_gen_data,
            "train": _cmd_train,
            "eval": _cmd_eval,
            "bench": _cmd_bench,
            "gradcheck": _cmd_gradcheck,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, CheckpointFormatError, ConfigError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
