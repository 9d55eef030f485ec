"""Command-line entry point.

Exit codes: 0 success, 1 domain violation (invalid network, rejected case),
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .adaptation import (
    AdaptationError,
    AdaptationSession,
    ExperienceTable,
    entry_variance,
    parse_snapshot,
    posterior_interval,
    serialize_snapshot,
)
from .inference import ZeroProbabilityEvidence
from .network import NetworkDef, NetworkError, chest_clinic, parse_network, serialize_network, validate
from .simulation import (
    CSV_HEADER,
    DEFAULT_TRACKED,
    ExperimentConfig,
    GroundTruth,
    TrackedEntry,
    all_cells,
    run_grid,
    sample_cases,
)


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from None


def parse_cases(text: str, net: NetworkDef) -> list[dict[str, str]]:
    """One case per line of ``var=state`` pairs; a blank line is a case with no findings."""
    cases = []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, raw in enumerate(lines, start=1):
        case = {}
        for tok in raw.split("#", 1)[0].split():
            var, sep, state = tok.partition("=")
            if not sep:
                raise NetworkError(f"cases line {lineno}: expected var=state, got {tok!r}")
            if var in case:
                raise NetworkError(f"cases line {lineno}: {var} given twice")
            net.variable(var).index(state)
            case[var] = state
        cases.append(case)
    return cases


def _mode_switches(raw: list[list[str]] | None) -> list[dict[str, str]]:
    out = []
    for tokens in raw or []:
        spec = dict(t.split("=", 1) for t in tokens if "=" in t)
        bad = [t for t in tokens if "=" not in t]
        if bad or not {"case", "var", "mode"} <= spec.keys():
            raise UsageError("--mode-switch needs case=N var=NAME mode=MODE [mss=X]")
        try:
            spec["case"] = int(spec["case"])
        except ValueError:
            raise UsageError(f"--mode-switch case must be an integer, got {spec['case']!r}") from None
        out.append(spec)
    return out


def cmd_validate(args) -> int:
    text = _read(args.network)
    try:
        net = parse_network(text)
    except NetworkError as exc:
        print(f"parse: {exc}")
        return 1
    problems = validate(net)
    for v in problems:
        print(v)
    if not problems:
        print(f"ok: {len(net.variables)} variables")
    return 1 if problems else 0


def _trace_entries(net: NetworkDef, tables: dict[str, ExperienceTable], specs) -> list[TrackedEntry]:
    if specs:
        return [TrackedEntry.parse(s, net) for s in specs]
    out = []
    for name, t in tables.items():
        if t.mode == "fixed":
            continue
        for cfg in net.parent_configs(name):
            for state in net.variable(name).states:
                out.append(TrackedEntry(name, cfg, state))
    return out


def cmd_adapt(args) -> int:
    net_text = _read(args.network)
    cases_text = _read(args.cases)
    try:
        net, tables = parse_snapshot(net_text)
        problems = validate(net)
        if problems:
            for v in problems:
                print(v, file=sys.stderr)
            return 1
        if not tables:
            tables = {n: ExperienceTable.from_cpt(net, n, ess=args.ess) for n in net.names}
        cases = parse_cases(cases_text, net)
        switches = _mode_switches(args.mode_switch)
        tracked = _trace_entries(net, tables, args.track)
    except (NetworkError, AdaptationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    session = AdaptationSession(net, tables)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = None
    if args.trace:
        fh = open(out / "trace.csv", "w", newline="", encoding="utf-8")
        trace = csv.writer(fh, lineterminator="\n")
        trace.writerow(CSV_HEADER)
    where = [(t, *t.locate(net), t.label(net)) for t in tracked]
    rejected = 0
    status = 0
    try:
        for n, case in enumerate(cases, start=1):
            for sw in switches:
                if sw["case"] == n - 1:
                    names = [x for x in session.tables if session.tables[x].mode != "fixed"] \
                        if sw["var"] in ("*", "all") else [sw["var"]]
                    for name in names:
                        if name not in session.tables:
                            raise UsageError(f"--mode-switch: {name} has no experience table")
                        session.set_mode(name, sw["mode"], sw.get("mss"))
            try:
                session.adapt(case)
            except ZeroProbabilityEvidence:
                rejected += 1
                print(f"case {n}: evidence has probability zero", file=sys.stderr)
                if args.strict:
                    status = 1
                    break
                continue
            if trace is not None:
                for t, row, col, label in where:
                    m = float(session.cpt(t.table)[row, col])
                    s = float(session.tables[t.table].counts[row].sum())
                    lo, hi = posterior_interval(m, s)
                    trace.writerow((n, t.table, label, t.state, repr(m), repr(float(entry_variance(m, s))),
                                    repr(float(lo)), repr(float(hi)), repr(s)))
    except AdaptationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = 1
    finally:
        if trace is not None:
            fh.close()
    final = session.network()
    (out / "network.net").write_text(serialize_network(final), encoding="utf-8")
    (out / "experience.net").write_text(serialize_snapshot(final, session.tables), encoding="utf-8")
    print(f"processed {session.n_cases} cases, rejected {rejected}; wrote {out}")
    return status


def cmd_sample(args) -> int:
    try:
        net = parse_network(_read(args.network))
    except NetworkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    problems = validate(net)
    if problems:
        for v in problems:
            print(v, file=sys.stderr)
        return 1
    x = sample_cases(GroundTruth(net), args.n, np.random.default_rng(args.seed))
    lines = [" ".join(f"{v.name}={v.states[s]}" for v, s in zip(net.variables, row)) for row in x]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_experiment(args, parser) -> int:
    if args.all:
        cells = all_cells(seed=args.seed, n_cases=args.cases)
    else:
        if not args.cell:
            parser.error("give --all or at least one --cell")
        cells = []
        for c in args.cell:
            try:
                cells.append(ExperimentConfig.parse(c, seed=args.seed, n_cases=args.cases))
            except ValueError as exc:
                parser.error(str(exc))
    net = chest_clinic()
    try:
        tracked = [TrackedEntry.parse(s, net) for s in args.track] if args.track else list(DEFAULT_TRACKED)
    except (ValueError, NetworkError) as exc:
        parser.error(str(exc))
    try:
        paths = run_grid(cells, args.out, tracked)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s 0.1.0 ({_kernels.backend()} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a network file")
    p.add_argument("network")

    p = sub.add_parser("adapt", help="adapt a network from a file of cases")
    p.add_argument("network", help="network or experience snapshot file")
    p.add_argument("cases")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ess", type=float, default=None,
                   help="prior sample size per row when the file has no adapt blocks (default 5k)")
    p.add_argument("--trace", action="store_true", help="write trace.csv with per-case trajectories")
    p.add_argument("--track", action="append", metavar="VAR:PARENTCONFIG:STATE")
    p.add_argument("--strict", action="store_true", help="abort on a zero-probability case")
    p.add_argument("--mode-switch", action="append", nargs="+", metavar="KEY=VALUE",
                   help="case=N var=NAME|all mode=fixed|accumulate|fade [mss=X]; applied after N cases")

    p = sub.add_parser("sample", help="draw complete cases from a network")
    p.add_argument("network")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("experiment", help="run chest-clinic grid cells")
    p.add_argument("--all", action="store_true", help="all 36 cells")
    p.add_argument("--cell", action="append", metavar="R1,O1,P1,L1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.add_argument("--track", action="append", metavar="VAR:PARENTCONFIG:STATE")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "adapt":
            return cmd_adapt(args)
        if args.command == "sample":
            if args.n < 0:
                parser.error("--n must be non-negative")
            return cmd_sample(args)
        return cmd_experiment(args, parser)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
