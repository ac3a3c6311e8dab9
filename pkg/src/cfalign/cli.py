"""Command-line interface.

Subcommands: gen-data, train, eval, ablate, sweep, grad-check. Every knob
can come from a flat JSON file (--config) holding run and dataset fields by
name; explicit flags override file values. Exit codes: 0 success, 2 config
error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_flat_config
from .data import SynthSpec, generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, DivergenceError, GenerationError
from .evaluate import eval_to_json, evaluate, save_eval_json
from .experiments import results_table, run_ablation, run_sensitivity, save_results
from .gradcheck import loss_battery
from .train import save_metrics_csv, train

__all__ = ["main", "build_parser"]

_ALL_FIELDS = RunConfig.field_names() | SynthSpec.field_names()

# flags are generated from the dataclasses; fields listed here stay file-only
_FILE_ONLY = {"class_means"}


def _scalar_kind(annotation) -> str | None:
    text = str(annotation).replace(" ", "")
    if text == "bool":
        return "bool"
    if text in ("int", "int|None"):
        return "int"
    if text in ("float", "list|float"):
        return "float"
    if text == "str":
        return "str"
    return None


_PARSERS = {"int": int, "float": float, "str": str}


def _add_config_flags(parser: argparse.ArgumentParser, cls) -> None:
    for f in dataclasses.fields(cls):
        if f.name in _FILE_ONLY:
            continue
        kind = _scalar_kind(f.type)
        if kind is None:
            continue
        flag = "--" + f.name.replace("_", "-")
        if kind == "bool":
            parser.add_argument(flag, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            parser.add_argument(flag, type=_PARSERS[kind], default=argparse.SUPPRESS, metavar=kind.upper())


def _load_doc(path) -> dict:
    if path is None:
        return {}
    doc = load_flat_config(path)
    unknown = set(doc) - _ALL_FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return doc


def _merged(args, cls) -> dict:
    doc = _load_doc(getattr(args, "config", None))
    present = vars(args)
    doc.update({name: present[name] for name in cls.field_names() if name in present})
    return doc


def _parse_value(kind: str, text: str):
    if kind == "bool":
        lowered = text.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot read {text!r} as a boolean")
    try:
        return _PARSERS[kind](text.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot read {text!r} as {kind}") from exc


def _cmd_gen_data(args) -> int:
    spec = SynthSpec.from_mapping(_merged(args, SynthSpec))
    data = generate_dataset(spec)
    save_dataset(args.out, data)
    print(
        f"wrote {args.out}: {spec.train_images} train images per domain, "
        f"{spec.eval_images} eval, {spec.classes} classes, seed {spec.seed}"
    )
    return 0


def _cmd_train(args) -> int:
    config = RunConfig.from_mapping(_merged(args, RunConfig))
    data = load_dataset(args.data)
    state, records = train(config, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_metrics_csv(records, out / "metrics.csv")
    save_checkpoint(state, out / "checkpoint.bin")
    record = evaluate(state, data.target_eval)
    save_eval_json(record, config, out / "result.json")
    print(f"mIOU {record.miou:.4f}  pseudo_acc {record.pseudo_acc:.4f}  -> {out}")
    return 0


def _cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    split = getattr(data, args.split)
    record = evaluate(state, split)
    text = eval_to_json(record, state.config)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def _cmd_ablate(args) -> int:
    config = RunConfig.from_mapping(_merged(args, RunConfig))
    data = load_dataset(args.data)
    results = run_ablation(config, data)
    sys.stdout.write(results_table(results))
    if args.out:
        save_results(results, args.out)
    return 0


def _cmd_sweep(args) -> int:
    config = RunConfig.from_mapping(_merged(args, RunConfig))
    annotations = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    if args.param not in annotations:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    kind = _scalar_kind(annotations[args.param])
    if kind is None:
        raise ConfigError(f"parameter {args.param!r} cannot be swept from the command line")
    values = [_parse_value(kind, piece) for piece in args.values.split(",") if piece.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    data = load_dataset(args.data)
    results = run_sensitivity(config, data, {args.param: values})
    sys.stdout.write(results_table(results))
    if args.out:
        save_results(results, args.out)
    return 0


def _cmd_grad_check(args) -> int:
    worst = loss_battery(instances=args.instances, seed=args.seed)
    failed = False
    for name, err in worst.items():
        ok = err < args.tolerance
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<32s} max rel err {err:.3e}")
    if failed:
        print(f"gradient check failed at tolerance {args.tolerance}", file=sys.stderr)
        return 1
    print(f"all gradient checks passed at tolerance {args.tolerance}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfalign",
        description="Coarse-to-fine feature alignment for pixel-wise domain adaptation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic two-domain dataset")
    p.add_argument("--config", type=Path, help="flat JSON with dataset fields")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_config_flags(p, SynthSpec)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", type=Path, help="flat JSON with run fields")
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_config_flags(p, RunConfig)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument(
        "--split",
        choices=("target_eval", "target_train", "source_train"),
        default="target_eval",
    )
    p.add_argument("--out", type=Path, help="also write the JSON here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the four toggle configurations")
    p.add_argument("--config", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, help="directory for results.json and table.txt")
    _add_config_flags(p, RunConfig)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep", help="sweep one config field over a value list")
    p.add_argument("--config", type=Path)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--param", required=True, help="RunConfig field to vary")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", type=Path)
    _add_config_flags(p, RunConfig)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("grad-check", help="finite-difference self-test over all losses")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, GenerationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
