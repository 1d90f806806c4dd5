"""Command-line front end.

Usage::

    wsnfaas [--home DIR] scenario run --config FILE --until TICKS [--seed N]
    wsnfaas [--home DIR] fn submit --file FILE [--user U]
    wsnfaas [--home DIR] fn cancel --id ID
    wsnfaas [--home DIR] fn list
    wsnfaas [--home DIR] results query --user U --from T0 --to T1
    wsnfaas [--home DIR] billing invoice --user U --from T0 --to T1
    wsnfaas [--home DIR] monitor report --from T0 --to T1
    wsnfaas [--home DIR] export --kind KIND --out PATH
    wsnfaas lifecycle simulate --plan FILE --n N --seed S
    wsnfaas [--home DIR] serve [--port P]

Exit codes: 0 success, 2 validation failure, 3 capacity rejection,
4 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from .errors import (
    ConfigError,
    InvalidPlan,
    UnknownFunction,
    UnknownUser,
    WsnError,
)
from .platform import ARTIFACTS, Platform
from .simcore import ScenarioConfig

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_CAPACITY = 3
EXIT_CONFIG = 4

DEFAULT_HOME = ".wsnfaas"


def _dump(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _window(args) -> tuple[int, int]:
    if args.to < args.from_:
        raise ConfigError("--to precedes --from")
    return (args.from_, args.to)


def cmd_scenario_run(args) -> int:
    config = ScenarioConfig.load(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    platform = Platform.open(args.home, config)
    summary = platform.run_scenario(args.until)
    _dump(summary)
    return EXIT_OK


def cmd_fn_submit(args) -> int:
    try:
        text = Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {args.file}: {exc}") from exc
    platform = Platform.open(args.home)
    result = platform.submit_function(text, args.user)
    _dump(result.to_dict())
    if result.accepted:
        return EXIT_OK
    return EXIT_CAPACITY if result.reason == "CapacityExceeded" else EXIT_INVALID


def cmd_fn_cancel(args) -> int:
    platform = Platform.open(args.home)
    instructions = platform.cancel_function(args.id)
    _dump({"functionId": args.id, "status": "Cancelled", "instructions": len(instructions)})
    return EXIT_OK


def cmd_fn_list(args) -> int:
    platform = Platform.open(args.home)
    _dump([f.meta() for f in sorted(platform.store.values(), key=lambda f: f.order)])
    return EXIT_OK


def cmd_results_query(args) -> int:
    platform = Platform.open(args.home)
    records = platform.query_results(args.user, _window(args))
    for rec in records:
        sys.stdout.write(json.dumps(rec.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")
    return EXIT_OK


def cmd_billing_invoice(args) -> int:
    platform = Platform.open(args.home)
    _dump(platform.query_invoice(args.user, _window(args)).to_dict())
    return EXIT_OK


def cmd_monitor_report(args) -> int:
    platform = Platform.open(args.home)
    sys.stdout.write(platform.monitor_report(_window(args)).to_ndjson())
    return EXIT_OK


def cmd_export(args) -> int:
    platform = Platform.open(args.home)
    src = Path(args.home) / "run" / ARTIFACTS[args.kind]
    if platform.last_run is None and src.exists():
        Path(args.out).write_bytes(src.read_bytes())
    else:
        platform.export(args.kind, args.out)
    return EXIT_OK


def cmd_lifecycle_simulate(args) -> int:
    from .lifecycle import LifecyclePlan, simulate_lifecycle

    plan = LifecyclePlan.load(args.plan)
    report = simulate_lifecycle(plan, args.n, args.seed, workers=args.workers)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    serve(args.home, args.host, args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsnfaas", description=__doc__.splitlines()[0])
    parser.add_argument("--home", default=os.environ.get("WSNFAAS_HOME", DEFAULT_HOME),
                        help="platform state directory (default: %(default)s)")
    parser.add_argument("-v", "--verbose", action="store_true")
    groups = parser.add_subparsers(dest="group", required=True)

    def window_args(p):
        p.add_argument("--from", dest="from_", type=int, required=True, help="first tick")
        p.add_argument("--to", type=int, required=True, help="end tick (exclusive)")

    scenario = groups.add_parser("scenario").add_subparsers(dest="action", required=True)
    p = scenario.add_parser("run", help="simulate the scenario with the active functions")
    p.add_argument("--config", required=True)
    p.add_argument("--until", type=int, required=True, help="ticks to simulate")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_scenario_run)

    fn = groups.add_parser("fn").add_subparsers(dest="action", required=True)
    p = fn.add_parser("submit")
    p.add_argument("--file", required=True)
    p.add_argument("--user")
    p.set_defaults(func=cmd_fn_submit)
    p = fn.add_parser("cancel")
    p.add_argument("--id", required=True)
    p.set_defaults(func=cmd_fn_cancel)
    p = fn.add_parser("list")
    p.set_defaults(func=cmd_fn_list)

    results = groups.add_parser("results").add_subparsers(dest="action", required=True)
    p = results.add_parser("query")
    p.add_argument("--user", required=True)
    window_args(p)
    p.set_defaults(func=cmd_results_query)

    billing = groups.add_parser("billing").add_subparsers(dest="action", required=True)
    p = billing.add_parser("invoice")
    p.add_argument("--user", required=True)
    window_args(p)
    p.set_defaults(func=cmd_billing_invoice)

    monitor = groups.add_parser("monitor").add_subparsers(dest="action", required=True)
    p = monitor.add_parser("report")
    window_args(p)
    p.set_defaults(func=cmd_monitor_report)

    lifecycle = groups.add_parser("lifecycle").add_subparsers(dest="action", required=True)
    p = lifecycle.add_parser("simulate")
    p.add_argument("--plan", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_lifecycle_simulate)

    p = groups.add_parser("export", help="write one artifact of the last run")
    p.add_argument("--kind", choices=sorted(ARTIFACTS), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = groups.add_parser("serve", help="answer CLI requests over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UnknownUser, UnknownFunction, InvalidPlan) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WsnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
