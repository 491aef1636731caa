"""Command line: ``defaulttimes run|list|validate``.

Exit codes: 0 all hard assertions pass, 1 an assertion failed (the report is
still written), 2 usage or configuration error (nothing is written).
The output directory defaults to ``$DEFAULTTIMES_OUT`` or ``./reports``.
"""

import argparse
import copy
import os
import sys

from . import config
from .errors import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _resolve(target):
    """A config path, or the name of a built-in scenario."""
    if os.path.exists(target):
        return config.load(target)
    if target in config.CATALOG:
        return config.catalog_entry(target)
    raise ConfigError(f"no such config file or scenario: {target}")


def _apply_overrides(doc, seed, tol):
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["seed"] = seed
    if tol is not None:
        doc["tol"] = tol
    return config.validate(doc)


def cmd_run(args):
    from .runner import ENV_OUT, execute, write_report

    doc = _apply_overrides(_resolve(args.config), args.seed, args.tol)
    report, tables, ok = execute(doc, parallel=args.parallel)
    out = args.out or os.environ.get(ENV_OUT) or "reports"
    out = os.path.join(out, doc["name"])
    write_report(report, tables, out)
    status = "ok" if ok else "FAILED"
    print(f"{doc['name']}: {status} (report in {out})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_list(args):
    for name, doc in config.CATALOG.items():
        print(f"{name:20s} {doc['anchor']}")
    return EXIT_OK


def cmd_validate(args):
    doc = _resolve(args.config)
    print(f"{doc['name']}: valid (schema version {config.SCHEMA_VERSION}, hash {config.config_hash(doc)[:12]})")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="defaulttimes", description="Default-time scenario runner.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the suites of a config file or built-in scenario")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: $DEFAULTTIMES_OUT or ./reports)")
    r.add_argument("--seed", type=int)
    r.add_argument("--tol", type=float)
    r.add_argument("--parallel", action="store_true", help="run suites and path blocks concurrently")
    r.set_defaults(func=cmd_run)
    sub.add_parser("list", help="list built-in scenarios").set_defaults(func=cmd_list)
    v = sub.add_parser("validate", help="check a config against the schema")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
