"""Command-line entry point.

    dynaprompt [--config FILE] [--set key=value ...] [--seed N] [--out DIR] <command> [options]

Commands: run, sweep-m, sweep-order, gradcheck, presets, export-stream.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .harness import RunConfig, gradcheck, run, seeded_parts, sweep_buffer_size, sweep_order
from .stream import PRESETS, UnknownPreset, collapse_stream, export_csv

log = logging.getLogger("dynaprompt")

EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3

DEFAULT_STREAM = RunConfig.__dataclass_fields__["stream"].default


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(data: dict, assignment: str) -> None:
    """Set a dotted key, e.g. ``strategy.alpha=0.01`` or ``stream=collapse-v1``."""
    key, sep, value = assignment.partition("=")
    if not sep or not key:
        raise ValueError(f"override must look like key=value, got {assignment!r}")
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        child = node.get(part)
        if part == "stream" and node is data:
            # field overrides on a preset start from the preset's full config
            name = DEFAULT_STREAM if child is None else child
            if isinstance(name, str):
                child = collapse_stream(name).to_dict()
        if not isinstance(child, dict):
            child = {}
        node[part] = child
        node = child
    node[parts[-1]] = parse_value(value)


def load_config(args) -> RunConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except OSError as e:
            raise OSError(f"cannot read config {path}: {e}") from e
    for assignment in args.set or []:
        apply_override(data, assignment)
    if args.seed is not None:
        data["run_seed"] = args.seed
    if args.out is not None:
        data["output_dir"] = args.out
    return RunConfig.from_dict(data)


def _write_sweep(rows: list[dict], out: str | None, name: str) -> None:
    if not out:
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / f"{name}.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")


def cmd_run(cfg: RunConfig, args) -> int:
    result = run(cfg)
    print(json.dumps({"mean_accuracy": result.mean_accuracy, "block_accuracies": result.block_accuracies,
                      "counters": result.counters}, sort_keys=True))
    return 0


def cmd_sweep_m(cfg: RunConfig, args) -> int:
    rows = sweep_buffer_size(cfg, args.M, jobs=args.jobs)
    _write_sweep(rows, cfg.output_dir, "sweep_m")
    print(json.dumps(rows, sort_keys=True))
    return 0


def cmd_sweep_order(cfg: RunConfig, args) -> int:
    rows = sweep_order(cfg, args.orders, jobs=args.jobs)
    _write_sweep(rows, cfg.output_dir, "sweep_order")
    print(json.dumps(rows, sort_keys=True))
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    report = gradcheck(cfg.model, args.trials, args.epsilon)
    print(json.dumps(asdict(report), sort_keys=True))
    return 0 if report.passed else EXIT_FAIL


def cmd_presets(cfg, args) -> int:
    for name in sorted(PRESETS):
        print(f"{name}\t{PRESETS[name].to_json()}")
    return 0


def cmd_export_stream(cfg: RunConfig, args) -> int:
    _, _, samples, _ = seeded_parts(cfg)
    out = Path(cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    export_csv(samples, out / "stream.csv")
    return 0


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynaprompt", description="Dynamic test-time prompt tuning experiments")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (dotted keys)")
    parser.add_argument("--seed", type=int, help="run seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("run", help="run one strategy over a stream").set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-m", help="sweep buffer capacity")
    p.add_argument("--M", type=_int_list, default=[1, 2, 5, 10], help="comma-separated capacities")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep_m)

    p = sub.add_parser("sweep-order", help="sweep sample-order seeds")
    p.add_argument("--orders", type=_int_list, default=[0, 1, 2, 3, 4, 5], help="comma-separated order seeds")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep_order)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    sub.add_parser("presets", help="list stream presets").set_defaults(func=cmd_presets)
    sub.add_parser("export-stream", help="write the configured stream to stream.csv").set_defaults(
        func=cmd_export_stream)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, KeyError, UnknownPreset) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(cfg, args)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
