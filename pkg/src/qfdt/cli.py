"""Command line: ``qfdt run | validate | list-identities``.

Exit status is 0 when every check passes, 1 when any check fails or
errors, and 2 when the scenario or the arguments are invalid.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import textwrap
from pathlib import Path

from .exceptions import ScenarioError
from .identities import CATALOG
from .runner import run, write_outputs
from .scenario import load_scenario

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1: {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qfdt", description="Check quantum fluctuation-dissipation identities "
                                "on model systems from a scenario file.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a scenario and write reports")
    r.add_argument("scenario", type=Path)
    r.add_argument("--output", type=Path, help="report directory (default: scenario output.dir or ./qfdt-out/<name>)")
    r.add_argument("--fail-fast", action="store_true", help="stop at the first failing or erroring check")
    r.add_argument("--fd-step", type=_positive_float, help="relative finite-difference step")
    r.add_argument("--atol", type=_positive_float, help="absolute tolerance")
    r.add_argument("--rtol", type=_positive_float, help="relative tolerance")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--threads", type=_positive_int, default=1, help="worker threads (default 1)")

    v = sub.add_parser("validate", help="parse and validate a scenario without running it")
    v.add_argument("scenario", type=Path)

    sub.add_parser("list-identities", help="print the identity catalog")
    return p


def _apply_overrides(scn, args):
    tol_over = {k: getattr(args, k) for k in ("atol", "rtol", "fd_step") if getattr(args, k) is not None}
    if tol_over:
        scn = dataclasses.replace(scn, tolerances=dataclasses.replace(scn.tolerances, **tol_over))
    if args.seed is not None:
        scn = dataclasses.replace(scn, seed=args.seed)
    return scn


def cmd_run(args) -> int:
    try:
        scn = _apply_overrides(load_scenario(args.scenario), args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = run(scn, threads=args.threads, fail_fast=args.fail_fast)
    out = args.output or Path(scn.output_dir or Path("qfdt-out") / scn.name)
    has_dyn = any(t.type == "dynamics" for t in scn.tasks)
    files = write_outputs(report, out, with_trajectory=has_dyn)
    c = report.counts()
    print(f"{scn.name}: {c['attempted']} checks, {c['passed']} passed, {c['failed']} failed, "
          f"{c['errors']} errors ({report.wall_time:.2f} s)")
    bad = [it for it in report.items if it.status != "pass"]
    for it in bad[:20]:
        where = ", ".join(f"{k}={v}" for k, v in {**it.grid, **it.params}.items())
        if it.report is not None:
            print(f"  FAIL  {it.identity_id} [{where}] lhs={it.report.lhs:.10g} rhs={it.report.rhs:.10g} "
                  f"residual={it.report.abs_residual:.3e}")
        else:
            print(f"  ERROR {it.identity_id} [{where}] {it.error}")
    if len(bad) > 20:
        print(f"  ... {len(bad) - 20} more in {files[1]}")
    if report.aborted:
        print("  aborted by --fail-fast")
    print("reports: " + ", ".join(str(f) for f in files))
    return EXIT_OK if report.all_passed else EXIT_FAILED


def cmd_validate(args) -> int:
    try:
        scn = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    grid = scn.grid_points()
    print(f"{scn.name}: valid (schema_version {scn.schema_version})")
    print(f"  model: {scn.model.kind}")
    print(f"  ensemble: {scn.ensemble.kind}, {len(grid)} grid point(s)")
    for i, t in enumerate(scn.tasks):
        n = len(grid) if t.type == "identity-suite" else ""
        extra = f" ({n} ensemble builds scheduled)" if n else ""
        print(f"  task {i}: {t.type}{extra}")
    if not scn.tasks:
        print("  no tasks")
    return EXIT_OK


def cmd_list_identities(args) -> int:
    width = max(len(k) for k in CATALOG)
    for key, (ensemble, formula, note) in CATALOG.items():
        line = f"{key:<{width}}  {ensemble:<16} {formula}"
        print(line)
        if note:
            print(textwrap.indent(f"({note})", " " * (width + 19)))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    return {"run": cmd_run, "validate": cmd_validate, "list-identities": cmd_list_identities}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
