"""Command line entry point: ``bwsim run|sweep|explore|verify``.

Exit codes: 0 every check passed, 1 some check failed, 2 usage or scenario error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .auth import MUTATIONS
from .checkers import FAIL
from .explore import StateSpaceExceeded
from .harness import (MIXES, exploration_lines, explore, load_scenario, run_once, sweep,
                      verify_trace)
from .model import ResilienceError
from .netsim import ScenarioError
from .trace import MalformedTrace

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


def _seed_range(text: str) -> range:
    lo, sep, hi = text.partition("..")
    try:
        if not sep:
            return range(int(lo), int(lo) + 1)
        return range(int(lo), int(hi) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bwsim", description=__doc__.splitlines()[0])
    parser.add_argument("--summary", action="store_true", help="print a human-readable table")
    # mutation testing only: deliberately weakens the protocol
    parser.add_argument("--mutate", action="append", default=[], choices=MUTATIONS,
                        help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--trace-out")
    p.add_argument("--round-budget", type=int,
                   help="rounds allowed after stabilization for the termination check")

    p = sub.add_parser("sweep", help="run a scenario over many seeds")
    p.add_argument("scenario")
    p.add_argument("--seeds", type=_seed_range, default=range(0, 100))
    p.add_argument("--mix", choices=sorted(MIXES), default="none")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("explore", help="enumerate all schedules of a small scenario")
    p.add_argument("scenario")
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--max-states", type=int, default=2_000_000)

    p = sub.add_parser("verify", help="re-check a saved trace")
    p.add_argument("trace")
    p.add_argument("--round-budget", type=int)
    return parser


def _load(args):
    scenario = load_scenario(args.scenario)
    if args.mutate:
        scenario.mutations = scenario.mutations | frozenset(args.mutate)
    return scenario


def _summary_table(rows: list[tuple[str, ...]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    out = sys.stdout
    try:
        if args.command == "run":
            report = run_once(_load(args), args.seed, args.trace_out, args.round_budget)
            if args.summary:
                rows = [("property", "status", "detail")]
                rows += [(v.property, v.status, v.explanation) for v in report.verdicts]
                print(_summary_table(rows), file=out)
                print(f"steps={report.steps} end={report.end}", file=out)
            else:
                print("\n".join(report.lines()), file=out)
            return EXIT_CHECK if report.failed else EXIT_OK
        if args.command == "sweep":
            result = sweep(_load(args), args.seeds, args.mix, args.workers)
            if args.summary:
                rows = [("property", "counts")]
                rows += [(k, " ".join(f"{s}={n}" for s, n in sorted(c.items())))
                         for k, c in sorted(result.counts().items())]
                print(_summary_table(rows), file=out)
                print(f"runs={len(result.runs)} failed={len(result.failures)}", file=out)
            else:
                print("\n".join(result.lines()), file=out)
            return EXIT_CHECK if result.failed else EXIT_OK
        if args.command == "explore":
            scenario = _load(args)
            try:
                report = explore(scenario, args.max_rounds, args.depth, args.max_states)
            except StateSpaceExceeded as exc:
                print(f"explore\t{scenario.name}\tstatus=state-space-exceeded\t"
                      f"states={exc.states}", file=out)
                return EXIT_USAGE
            print("\n".join(exploration_lines(scenario.name, report)), file=out)
            return EXIT_OK if report.ok else EXIT_CHECK
        if args.command == "verify":
            verdicts = verify_trace(args.trace, args.round_budget)
            if args.summary:
                rows = [("property", "status", "detail")]
                rows += [(v.property, v.status, v.explanation) for v in verdicts]
                print(_summary_table(rows), file=out)
            else:
                print("\n".join("verdict\t" + v.to_line() for v in verdicts), file=out)
            return EXIT_CHECK if any(v.status == FAIL for v in verdicts) else EXIT_OK
    except (ResilienceError, ScenarioError, MalformedTrace, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
