"""Command-line front end: load graphs and scenarios, run checks, fuzz, report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .casl import DEFAULT_LOOP_CAP, run_scenario
from .errors import (
    ConfigError,
    ContractViolation,
    InconclusiveError,
    InputError,
    InternalInvariantError,
)
from .estimator import DEFAULT_EXPANSION_CAP
from .flowgraph import compute_flow, graph_from_json, graph_to_dot, graph_to_json
from .keyspace import value_to_json
from .oracle import (
    THEOREMS,
    EnumBounds,
    check_theorem,
    default_bounds,
    flow_equivalence,
    naive_flow,
    random_graph,
    rng_for,
    universe_for,
)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_INCONCLUSIVE = 3

_VERDICT_EXITS = {
    "pass": EXIT_PASS,
    "fail": EXIT_FAIL,
    "input-error": EXIT_INPUT,
    "inconclusive": EXIT_INCONCLUSIVE,
}


# ---------------------------------------------------------------- report


@dataclass(frozen=True)
class Report:
    """Machine-readable outcome of one subcommand run."""

    command: str
    verdict: str
    details: tuple[Any, ...] = ()
    counterexample: Any = None

    def __post_init__(self) -> None:
        if self.verdict not in _VERDICT_EXITS:
            raise InternalInvariantError(f"bad verdict {self.verdict!r}")
        if (self.counterexample is not None) != (self.verdict == "fail"):
            raise InternalInvariantError("counterexample present iff verdict is fail")

    @property
    def exit_code(self) -> int:
        return _VERDICT_EXITS[self.verdict]

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "command": self.command,
            "verdict": self.verdict,
            "details": list(self.details),
        }
        if self.counterexample is not None:
            out["counterexample"] = self.counterexample
        return out


def _emit(report: Report, as_json: bool, lines: list[str]) -> int:
    if as_json:
        print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)
        print(f"verdict: {report.verdict}")
    return report.exit_code


def _load_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------- subcommands


def _cmd_flow(args: argparse.Namespace) -> int:
    g = graph_from_json(_load_json(args.graph))
    try:
        flow = compute_flow(g, args.max_iter)
    except InternalInvariantError as exc:
        if args.max_iter is None:
            raise
        report = Report("flow", "inconclusive", (str(exc),))
        return _emit(report, args.json, [str(exc)])
    details = tuple(
        {"node": x, "inset": value_to_json(flow[x])} for x in sorted(flow)
    )
    if args.dot:
        Path(args.dot).write_text(graph_to_dot(g, flow))
    report = Report("flow", "pass", details)
    lines = [f"IS({x}) = {flow[x]}" for x in sorted(flow)]
    return _emit(report, args.json, lines)


def _cmd_check(args: argparse.Namespace) -> int:
    sr = run_scenario(
        args.scenario,
        seed=args.seed,
        closure_cap=args.closure_cap,
        loop_cap=args.loop_cap,
    )
    details = tuple(s.to_json() for s in sr.steps)
    report = Report("check", sr.verdict, details, sr.counterexample)
    lines = []
    for s in sr.steps:
        mark = "ok" if s.ok else "FAIL"
        note = f"  {s.note}" if s.note else ""
        lines.append(f"[{mark}] step {s.index} {s.label}{note}")
        for c in s.checks:
            if not c.ok:
                lines.append(f"       {c.name}: {c.detail}")
    return _emit(report, args.json, lines)


def _worker_count() -> int:
    cap = os.environ.get("FLOWCHECK_THREADS")
    available = os.cpu_count() or 1
    if cap is None:
        return available
    try:
        limit = int(cap)
    except ValueError as exc:
        raise InputError(f"FLOWCHECK_THREADS must be an integer: {cap!r}") from exc
    if limit < 1:
        raise InputError("FLOWCHECK_THREADS must be at least 1")
    return min(limit, available)


def _cmd_fuzz(args: argparse.Namespace) -> int:
    universe = universe_for(EnumBounds())
    seed, nodes = args.seed, args.nodes

    def one_case(i: int) -> dict[str, Any] | None:
        # stateless worker: the rng is derived from the case index alone
        g = random_graph(rng_for("flow-fuzz", i, seed), universe, max_nodes=nodes)
        if compute_flow(g, args.max_iter) != naive_flow(g):
            return {"case": i, "seed": seed, "graph": graph_to_json(g)}
        return None

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        outcomes = list(pool.map(one_case, range(args.cases)))
    witness = next((w for w in outcomes if w is not None), None)
    mismatches = sum(1 for w in outcomes if w is not None)
    details = (
        {"cases": args.cases, "maxNodes": nodes, "seed": seed, "mismatches": mismatches},
    )
    verdict = "pass" if witness is None else "fail"
    report = Report("fuzz", verdict, details, witness)
    lines = [f"fuzz: {args.cases} cases, {mismatches} mismatches"]
    return _emit(report, args.json, lines)


def _cmd_oracle(args: argparse.Namespace) -> int:
    if args.theorem == "FlowEquivalence":
        tr = flow_equivalence(
            cases=1000 if args.cases is None else args.cases, seed=args.seed
        )
    else:
        bounds = None
        if args.nodes is not None:
            bounds = dataclasses.replace(
                default_bounds(args.theorem), max_nodes=args.nodes
            )
        tr = check_theorem(
            args.theorem, bounds=bounds, cases=args.cases, seed=args.seed
        )
    verdict = "pass" if tr.ok else "fail"
    report = Report("oracle", verdict, (tr.to_json(),), tr.counterexample)
    lines = [f"{tr.name}: {'ok' if tr.ok else 'FAIL'}, {tr.checked} instances checked"]
    lines.extend(f"  {note}" for note in tr.notes)
    return _emit(report, args.json, lines)


# ---------------------------------------------------------------- entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcheck",
        description="Flow-graph computation and context-aware proof checking.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_flow = sub.add_parser("flow", help="compute per-node insets of a graph file")
    p_flow.add_argument("graph", help="flow graph JSON file")
    p_flow.add_argument("--max-iter", type=int, default=None)
    p_flow.add_argument("--dot", metavar="FILE", help="write a DOT dump of the graph")
    p_flow.add_argument("--json", action="store_true")

    p_check = sub.add_parser("check", help="check a proof scenario file")
    p_check.add_argument("scenario", help="scenario JSON file")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--closure-cap", type=int, default=DEFAULT_EXPANSION_CAP)
    p_check.add_argument("--loop-cap", type=int, default=DEFAULT_LOOP_CAP)
    p_check.add_argument("--json", action="store_true")

    p_fuzz = sub.add_parser("fuzz", help="random graphs: engine vs naive fixpoint")
    p_fuzz.add_argument("--cases", type=int, default=1000)
    p_fuzz.add_argument("--nodes", type=int, default=16)
    p_fuzz.add_argument("--seed", type=int, default=0)
    p_fuzz.add_argument("--max-iter", type=int, default=None)
    p_fuzz.add_argument("--json", action="store_true")

    p_oracle = sub.add_parser("oracle", help="run one named theorem check")
    p_oracle.add_argument(
        "--theorem", required=True, choices=THEOREMS + ("FlowEquivalence",)
    )
    p_oracle.add_argument("--nodes", type=int, default=None)
    p_oracle.add_argument("--cases", type=int, default=None)
    p_oracle.add_argument("--seed", type=int, default=0)
    p_oracle.add_argument("--json", action="store_true")

    return parser


_HANDLERS = {
    "flow": _cmd_flow,
    "check": _cmd_check,
    "fuzz": _cmd_fuzz,
    "oracle": _cmd_oracle,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.subcommand](args)
    except (InputError, ConfigError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InconclusiveError as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE


if __name__ == "__main__":
    sys.exit(main())
