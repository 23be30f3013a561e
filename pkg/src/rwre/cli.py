"""Command line entry point: ``rwre <experiment> --config FILE [--seed N] [--jobs N] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from .config import KINDS, ConfigError, build_config, read_config_file, validate
from .env import BoxExhausted, InvalidSpec
from .estimators import InsufficientSamples
from .pathstats import CensoredWindow

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BOX = 3
EXIT_SAMPLES = 4
EXIT_INTERNAL = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwre", description="Random walk in random environment experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="YAML or JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="overrides RWRE_SEED and the file")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for replicas")
        p.add_argument("--out", default=None, help="output directory")
    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("--config", required=True)
    v.add_argument("--kind", choices=KINDS, default=None)
    return parser


def _write_error(out_dir, kind: str, message: str, details=None) -> None:
    print(f"rwre: {kind}: {message}", file=sys.stderr)
    if out_dir is None:
        return
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    payload = {"error": kind, "message": message, "details": details or []}
    (root / "error.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _validate(args) -> int:
    try:
        raw = read_config_file(args.config)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(d, file=sys.stderr)
        return EXIT_CONFIG
    if args.kind is not None:
        raw = {**raw, "kind": args.kind}
    diags = validate(raw)
    for d in diags:
        print(d, file=sys.stderr)
    if not diags:
        print("ok")
    return EXIT_CONFIG if diags else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return _validate(args)
    if args.jobs < 1:
        print("rwre: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out
    try:
        raw = read_config_file(args.config)
        if out_dir is None:
            out_dir = raw.get("out", "out")
        cfg = build_config(raw, kind=args.command, seed=args.seed, out=args.out)
    except ConfigError as exc:
        _write_error(out_dir, "config", str(exc), exc.diagnostics)
        return EXIT_CONFIG
    from .harness import run_experiment

    try:
        root = run_experiment(cfg, jobs=args.jobs)
    except (InvalidSpec, ConfigError) as exc:
        _write_error(cfg.out, "config", str(exc))
        return EXIT_CONFIG
    except BoxExhausted as exc:
        _write_error(cfg.out, "box_exhausted", str(exc),
                     {"site": [int(v) for v in exc.site], "step": exc.step})
        return EXIT_BOX
    except (InsufficientSamples, CensoredWindow) as exc:
        _write_error(cfg.out, "insufficient_samples", str(exc))
        return EXIT_SAMPLES
    except Exception as exc:  # noqa: BLE001
        _write_error(cfg.out, "internal", f"{type(exc).__name__}: {exc}",
                     traceback.format_exc().splitlines())
        return EXIT_INTERNAL
    print(str(root / "summary.json"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
