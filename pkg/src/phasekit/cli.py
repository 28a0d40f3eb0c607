"""Command-line entry point: ``phasekit <command> ...``.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .basis import load_demo, save_demo
from .errors import InvalidArgument
from .harness import (POLICIES, Learned, PolicyConfig, SuiteSpec, export, load_report, run_suite, run_trial,
                      save_report, train, write_estimate_log)
from .sim import TOLERANCES, WorldConfig, generate_demos

log = logging.getLogger("phasekit")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class ConfigError(Exception):
    """Bad user input; maps to exit code 1."""


def _load(what: str, loader, path):
    try:
        return loader(path)
    except (OSError, InvalidArgument, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{what} {path}: {exc}") from exc


def cmd_demo_gen(args) -> int:
    if args.n < 1:
        raise ConfigError("--n must be at least 1")
    world = WorldConfig().with_tolerance(args.tolerance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, demo in enumerate(generate_demos(args.n, args.seed, world)):
        save_demo(demo, out / f"demo_{i:03d}")
    print(f"wrote {args.n} demonstrations to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    paths = sorted(Path(args.demos).glob("*.csv"))
    if len(paths) < 2:
        raise ConfigError(f"need at least two demonstrations in {args.demos}")
    demos = [_load("demonstration", load_demo, p) for p in paths]
    try:
        learned = train(demos, basis_count=args.basis_count, mask_ft=args.mask_ft)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from exc
    learned.save(args.out)
    print(f"trained on {len(demos)} demonstrations; model written to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    learned = _load("model", Learned.load, args.model)
    world = _load("world config", WorldConfig.load, args.world) if args.world else WorldConfig()
    try:
        cfg = PolicyConfig(kind=args.policy, mask_ft=not learned.model.usable[learned.model.channel("fx")])
    except (InvalidArgument, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.timeout is not None:
        cfg = replace(cfg, timeout=args.timeout)
    rows: list = []
    result = run_trial(learned, world, cfg, args.seed, estimates=rows if args.log else None)
    if args.log:
        write_estimate_log(rows, learned.model.labels, args.log)
    print(json.dumps({k: v for k, v in result.to_dict().items() if k != "log"}))
    return EXIT_OK


def cmd_eval(args) -> int:
    spec = _load("suite", SuiteSpec.load, args.suite)
    trials = spec.trials if args.trials is None else args.trials
    if trials < 1:
        raise ConfigError("--trials must be at least 1")
    report = run_suite(spec.conditions, trials, spec.seed, spec.training, spec.world)
    save_report(report, args.out)
    for row in report.summary()["rows"]:
        print(f"{row['condition']:<28} {row['successes']:>3}/{row['n']}  ({100 * row['success_rate']:.1f}%)")
    return EXIT_OK


def cmd_export(args) -> int:
    report = _load("report", load_report, args.input)
    src = Path(args.input)
    out = args.out or src.with_name(src.stem + (".phase.csv" if args.format == "csv" else ".summary.json"))
    export(report, args.format, out)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phasekit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-gen", help="record scripted demonstrations")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--tolerance", choices=sorted(TOLERANCES), default="1mm")
    p.set_defaults(func=cmd_demo_gen)

    p = sub.add_parser("train", help="fit a model bundle from a demonstration directory")
    p.add_argument("--demos", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--basis-count", type=int, default=11)
    p.add_argument("--mask-ft", action="store_true", help="treat force/torque channels as unusable")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run one closed-loop trial")
    p.add_argument("--model", required=True)
    p.add_argument("--policy", choices=POLICIES, default="enbip")
    p.add_argument("--world", help="world config JSON (defaults to the built-in world)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float)
    p.add_argument("--log", help="write the per-update estimate log to this CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="run a suite of conditions")
    p.add_argument("--suite", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export a report as phase CSV or summary JSON")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=("csv", "json"), required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
