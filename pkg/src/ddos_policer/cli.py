"""Command-line entry point.

    ddos-policer run --config scenario.json --out results/ [--seed N] [--decisions log.csv]
    ddos-policer preset fig6a [--out results/] [--set population.n_legit=50 ...]
    ddos-policer bench [--sizes 1e6,1e7] [--out results/]

Log verbosity comes from ``DDOS_POLICER_LOG`` (DEBUG, INFO, WARNING, ...).
Exit status: 0 ok, 2 invalid input, 3 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .engine import ConfigError, ScenarioConfig, run, summarize, write_outputs
from .policer import DecisionLog
from .presets import UnknownPreset, expand, run_points

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
LOG_ENV = "DDOS_POLICER_LOG"

log = logging.getLogger("ddos_policer")


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        return _fail(EXIT_INVALID, f"config file {path} not found")
    try:
        cfg = ScenarioConfig.load(path)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed).validate()
    except ConfigError as exc:
        return _fail(EXIT_INVALID, str(exc))
    try:
        if args.decisions:
            with open(args.decisions, "w", newline="") as fh:
                result = run(cfg, DecisionLog(fh))
        else:
            result = run(cfg)
        csv_path, json_path = write_outputs(result, args.out)
    except (OSError, RuntimeError, ValueError) as exc:
        return _fail(EXIT_RUNTIME, f"run failed: {exc}")
    verdicts = summarize(result).get("bounds", {})
    print(f"wrote {csv_path} and {json_path}")
    if verdicts:
        print(f"theorem1_ok={verdicts['theorem1_ok']} lemma1_ok={verdicts['lemma1_ok']}")
    return EXIT_OK


def cmd_preset(args) -> int:
    try:
        points = expand(args.name, args.set or [])
    except UnknownPreset as exc:
        return _fail(EXIT_INVALID, exc.args[0])
    except ConfigError as exc:
        return _fail(EXIT_INVALID, str(exc))
    try:
        results = run_points(points, args.out, args.name)
    except (OSError, RuntimeError, ValueError) as exc:
        return _fail(EXIT_RUNTIME, f"preset {args.name} failed: {exc}")
    for r in results:
        b = r.summary.get("bounds", {})
        extra = ""
        if b:
            extra = (f" legit/fair={b['legit_over_fair']:.3f} theorem1_ok={b['theorem1_ok']}"
                     f" lemma1_ok={b['lemma1_ok']}")
        print(f"{r.point.name}: {r.runtime:.1f}s{extra}")
    print(f"outputs in {args.out}")
    return EXIT_OK


def _parse_sizes(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        value = float(part)
        if value < 1 or value != int(value):
            raise ValueError(f"bad table size {part!r}")
        out.append(int(value))
    return out


def cmd_bench(args) -> int:
    try:
        sizes = _parse_sizes(args.sizes)
    except ValueError as exc:
        return _fail(EXIT_INVALID, str(exc))
    from .bench import run_bench  # numba compile is only paid by this command

    try:
        report = run_bench(sizes, packets=args.packets)
    except (MemoryError, ValueError) as exc:
        return _fail(EXIT_RUNTIME, f"bench failed: {exc}")
    print(f"entry payload {report.bytes_per_entry} B + key {report.key_bytes} B")
    print(f"{'entries':>12} {'median_ns':>10} {'p99_ns':>10} {'bytes/entry':>12}")
    for p in report.points:
        print(f"{p.table_size:>12} {p.median_ns:>10.1f} {p.p99_ns:>10.1f} {p.container_bytes_per_entry:>12.1f}")
    for n, why in report.skipped.items():
        print(f"{n:>12} skipped: {why}")
    if report.median_ratio is not None:
        print(f"median ratio largest/smallest: {report.median_ratio:.2f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddos-policer", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--decisions", help="write every rate-limiting decision to this CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a named experiment or sweep")
    p.add_argument("name")
    p.add_argument("--out", default="results")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("bench", help="per-packet policing cost vs flow-table size")
    p.add_argument("--sizes", default="1e6,1e7")
    p.add_argument("--packets", type=int, default=10**6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
