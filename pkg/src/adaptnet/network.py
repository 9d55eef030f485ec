"""Discrete Bayesian networks: definition, validation and the text file format.

A network file is line oriented. ``#`` starts a comment. Four block kinds::

    variable smoke { yes no }
    parents bronc { smoke }
    cpt bronc {
      0.6 0.4      # smoke=yes
      0.3 0.7      # smoke=no
    }
    adapt bronc { mode=accumulate ess=10 mss=default }

``experience`` blocks (same layout as ``cpt``, holding counts) are handled by
:mod:`adaptnet.adaptation`. Parent configurations are enumerated row-major
over the declared parent list, so the last parent varies fastest.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from graphlib import CycleError, TopologicalSorter
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

NORMALIZATION_TOL = 1e-9
# Columns closer to 1 than this are left alone so that serialized files are a
# fixed point of parse/serialize.
_RENORMALIZE_ABOVE = 1e-13

Evidence = Mapping[str, str]


class NetworkError(ValueError):
    """Structural problem with a network definition."""


class ParseError(NetworkError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = f"line {line}, col {col}: " if line is not None else ""
        super().__init__(where + message)


class InvalidEvidence(NetworkError):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    states: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def k(self) -> int:
        return len(self.states)

    def index(self, state: str) -> int:
        try:
            return self.states.index(state)
        except ValueError:
            raise InvalidEvidence(f"{state!r} is not a state of {self.name}") from None


@dataclass(frozen=True)
class Violation:
    kind: str
    where: tuple[str, ...]
    message: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.message}"


@dataclass(frozen=True, eq=False)
class NetworkDef:
    """Immutable DAG of discrete variables.

    ``cpts[name]`` is an array of shape ``(n_parent_configs, k)``; row ``j``
    is the distribution of the child under the ``j``-th parent configuration.
    Construction does not enforce the invariants, use :func:`validate`.
    """

    variables: tuple[Variable, ...]
    parents: Mapping[str, tuple[str, ...]]
    cpts: Mapping[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        variables = tuple(self.variables)
        names = [v.name for v in variables]
        parents = {n: tuple(self.parents.get(n, ())) for n in names}
        cpts = {}
        for n, table in self.cpts.items():
            arr = np.array(table, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr[None, :]
            arr.setflags(write=False)
            cpts[n] = arr
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "cpts", cpts)

    @cached_property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @cached_property
    def _index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise InvalidEvidence(f"unknown variable {name!r}") from None

    def variable(self, name: str) -> Variable:
        return self.variables[self.index(name)]

    def card(self, name: str) -> int:
        return self.variable(name).k

    def parent_cards(self, name: str) -> tuple[int, ...]:
        return tuple(self.card(p) for p in self.parents[name])

    def n_configs(self, name: str) -> int:
        return math.prod(self.parent_cards(name))

    def parent_configs(self, name: str) -> list[tuple[str, ...]]:
        """Parent state tuples in row-major order (last parent fastest)."""
        states = [self.variable(p).states for p in self.parents[name]]
        return list(itertools.product(*states))

    def config_index(self, name: str, parent_states: Sequence[str]) -> int:
        idx = 0
        for p, s in zip(self.parents[name], parent_states, strict=True):
            idx = idx * self.card(p) + self.variable(p).index(s)
        return idx

    def children(self, name: str) -> tuple[str, ...]:
        return tuple(n for n in self.names if name in self.parents[n])

    def topological_order(self) -> list[str]:
        """Declared-order-stable topological sort; raises ``NetworkError`` on a cycle."""
        order: list[str] = []
        indeg = {n: len(self.parents[n]) for n in self.names}
        ready = [n for n in self.names if indeg[n] == 0]
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self.children(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort(key=self._index.__getitem__)
        if len(order) != len(self.names):
            raise NetworkError("network has a directed cycle")
        return order

    def total_states(self) -> int:
        return math.prod(v.k for v in self.variables)

    def with_cpts(self, updates: Mapping[str, np.ndarray]) -> "NetworkDef":
        cpts = dict(self.cpts)
        cpts.update(updates)
        return NetworkDef(self.variables, self.parents, cpts)

    def evidence_indices(self, evidence: Evidence | None) -> np.ndarray:
        """Evidence as an int array over variables, ``-1`` for unobserved."""
        out = np.full(len(self.variables), -1, dtype=np.int64)
        for name, state in (evidence or {}).items():
            i = self.index(name)
            out[i] = self.variables[i].index(state)
        return out

    def equals(self, other: "NetworkDef", tol: float = 1e-12) -> bool:
        if self.variables != other.variables or self.parents != other.parents:
            return False
        if self.cpts.keys() != other.cpts.keys():
            return False
        for n, a in self.cpts.items():
            b = other.cpts[n]
            if a.shape != b.shape or not np.allclose(a, b, rtol=0.0, atol=tol):
                return False
        return True


def make_network(
    variables: Mapping[str, Sequence[str]],
    parents: Mapping[str, Sequence[str]],
    cpts: Mapping[str, Sequence],
) -> NetworkDef:
    """Convenience constructor from plain dicts (declaration order preserved)."""
    return NetworkDef(
        tuple(Variable(n, tuple(s)) for n, s in variables.items()),
        {n: tuple(p) for n, p in parents.items()},
        {n: np.asarray(c, dtype=np.float64) for n, c in cpts.items()},
    )


def validate(net: NetworkDef) -> list[Violation]:
    """Every invariant violation in ``net``; an empty list means valid."""
    out: list[Violation] = []
    seen: set[str] = set()
    for v in net.variables:
        if v.name in seen:
            out.append(Violation("duplicate", (v.name,), f"variable {v.name} declared twice"))
        seen.add(v.name)
        if len(v.states) < 2:
            out.append(Violation("states", (v.name,), f"{v.name} needs at least 2 states"))
        if len(set(v.states)) != len(v.states):
            out.append(Violation("states", (v.name,), f"{v.name} has repeated state labels"))

    parents_ok = True
    for n in net.names:
        for p in net.parents.get(n, ()):
            if p not in seen:
                parents_ok = False
                out.append(Violation("reference", (n, p), f"{n} has undeclared parent {p}"))
    for n in net.parents:
        if n not in seen:
            out.append(Violation("reference", (n,), f"parents given for undeclared {n}"))

    if parents_ok:
        try:
            tuple(TopologicalSorter({n: net.parents[n] for n in net.names}).static_order())
        except CycleError as exc:
            cycle = tuple(dict.fromkeys(exc.args[1]))
            out.append(Violation("cycle", cycle, "directed cycle through {" + ", ".join(sorted(cycle)) + "}"))

    for n in net.names:
        table = net.cpts.get(n)
        if table is None:
            out.append(Violation("shape", (n,), f"{n} has no CPT"))
            continue
        if not parents_ok:
            continue
        expected = (net.n_configs(n), net.card(n))
        if table.shape != expected:
            out.append(Violation("shape", (n,), f"CPT of {n} has shape {table.shape}, expected {expected}"))
            continue
        if np.any(table < 0) or np.any(~np.isfinite(table)):
            out.append(Violation("negative", (n,), f"CPT of {n} has negative or non-finite entries"))
        sums = table.sum(axis=1)
        for j, cfg in enumerate(net.parent_configs(n)):
            if abs(sums[j] - 1.0) > NORMALIZATION_TOL:
                label = _config_label(net.parents[n], cfg) or "(root)"
                out.append(Violation(
                    "normalization", (n,),
                    f"CPT column of {n} at {label} sums to {float(sums[j])!r}",
                ))
    for n in net.cpts:
        if n not in seen:
            out.append(Violation("reference", (n,), f"CPT given for undeclared {n}"))
    return out


def _config_label(parents: Sequence[str], config: Sequence[str]) -> str:
    return "&".join(f"{p}={s}" for p, s in zip(parents, config))


config_label = _config_label


# ---------------------------------------------------------------------------
# text format


@dataclass
class Block:
    kind: str
    name: str
    rows: list[list[tuple[str, int, int]]]
    line: int
    col: int


@dataclass
class Document:
    """A parsed file: the network plus raw ``adapt``/``experience`` payloads."""

    network: NetworkDef
    adapt: dict[str, dict[str, str]]
    experience: dict[str, np.ndarray]


_KINDS = ("variable", "parents", "cpt", "adapt", "experience")


def _tokenize(text: str) -> list[tuple[str, int, int]]:
    """Tokens as (value, line, col); ``"\\n"`` tokens mark line ends."""
    tokens = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        i = 0
        while i < len(line):
            ch = line[i]
            if ch.isspace():
                i += 1
            elif ch in "{}":
                tokens.append((ch, lineno, i + 1))
                i += 1
            else:
                j = i
                while j < len(line) and not line[j].isspace() and line[j] not in "{}":
                    j += 1
                tokens.append((line[i:j], lineno, i + 1))
                i = j
        tokens.append(("\n", lineno, len(line) + 1))
    return tokens


def _blocks(text: str) -> list[Block]:
    tokens = _tokenize(text)
    blocks = []
    i = 0
    n = len(tokens)
    while i < n:
        tok, line, col = tokens[i]
        if tok == "\n":
            i += 1
            continue
        if tok not in _KINDS:
            raise ParseError(f"expected one of {', '.join(_KINDS)}, got {tok!r}", line, col)
        if i + 2 >= n or tokens[i + 1][0] in "{}\n" or tokens[i + 2][0] != "{":
            raise ParseError(f"expected '{tok} <name> {{'", line, col)
        name = tokens[i + 1][0]
        i += 3
        rows: list[list[tuple[str, int, int]]] = [[]]
        while True:
            if i >= n:
                raise ParseError(f"unterminated {tok} block for {name}", line, col)
            t = tokens[i]
            i += 1
            if t[0] == "}":
                break
            if t[0] == "{":
                raise ParseError("unexpected '{'", t[1], t[2])
            if t[0] == "\n":
                if rows[-1]:
                    rows.append([])
            else:
                rows[-1].append(t)
        rows = [r for r in rows if r]
        blocks.append(Block(tok, name, rows, line, col))
    return blocks


def _number(tok: tuple[str, int, int]) -> float:
    try:
        x = float(tok[0])
    except ValueError:
        raise ParseError(f"expected a number, got {tok[0]!r}", tok[1], tok[2]) from None
    if not math.isfinite(x):
        raise ParseError(f"non-finite number {tok[0]!r}", tok[1], tok[2])
    return x


def _matrix(block: Block, shape: tuple[int, int], what: str) -> np.ndarray:
    n_rows, k = shape
    rows = block.rows
    if len(rows) != n_rows:
        raise ParseError(
            f"{what} of {block.name} has {len(rows)} rows, expected {n_rows} "
            f"(one per parent configuration)", block.line, block.col)
    out = np.empty(shape)
    for j, row in enumerate(rows):
        if len(row) != k:
            raise ParseError(
                f"{what} row {j + 1} of {block.name} has {len(row)} entries, expected {k}",
                row[0][1], row[0][2])
        out[j] = [_number(t) for t in row]
    return out


def parse_document(text: str) -> Document:
    blocks = _blocks(text)
    variables: dict[str, Variable] = {}
    for b in blocks:
        if b.kind != "variable":
            continue
        if b.name in variables:
            raise ParseError(f"duplicate variable {b.name}", b.line, b.col)
        states = [t[0] for row in b.rows for t in row]
        if len(states) < 2:
            raise ParseError(f"variable {b.name} needs at least 2 states", b.line, b.col)
        if len(set(states)) != len(states):
            raise ParseError(f"variable {b.name} has duplicate states", b.line, b.col)
        variables[b.name] = Variable(b.name, tuple(states))
    if not variables:
        raise ParseError("no variables declared")

    def declared(b: Block):
        if b.name not in variables:
            raise ParseError(f"{b.kind} block for undeclared variable {b.name}", b.line, b.col)

    parents: dict[str, tuple[str, ...]] = {}
    for b in blocks:
        if b.kind != "parents":
            continue
        declared(b)
        if b.name in parents:
            raise ParseError(f"duplicate parents block for {b.name}", b.line, b.col)
        ps = []
        for t in (t for row in b.rows for t in row):
            if t[0] not in variables:
                raise ParseError(f"undeclared parent {t[0]} of {b.name}", t[1], t[2])
            if t[0] in ps:
                raise ParseError(f"parent {t[0]} listed twice for {b.name}", t[1], t[2])
            ps.append(t[0])
        parents[b.name] = tuple(ps)

    def shape(name: str) -> tuple[int, int]:
        return (math.prod(variables[p].k for p in parents.get(name, ())), variables[name].k)

    cpts: dict[str, np.ndarray] = {}
    experience: dict[str, np.ndarray] = {}
    adapt: dict[str, dict[str, str]] = {}
    for b in blocks:
        if b.kind == "cpt":
            declared(b)
            if b.name in cpts:
                raise ParseError(f"duplicate cpt for {b.name}", b.line, b.col)
            table = _matrix(b, shape(b.name), "cpt")
            sums = table.sum(axis=1)
            fix = (np.abs(sums - 1.0) <= NORMALIZATION_TOL) & (np.abs(sums - 1.0) > _RENORMALIZE_ABOVE)
            table[fix] /= sums[fix, None]
            cpts[b.name] = table
        elif b.kind == "experience":
            declared(b)
            if b.name in experience:
                raise ParseError(f"duplicate experience for {b.name}", b.line, b.col)
            experience[b.name] = _matrix(b, shape(b.name), "experience")
        elif b.kind == "adapt":
            declared(b)
            if b.name in adapt:
                raise ParseError(f"duplicate adapt for {b.name}", b.line, b.col)
            opts = {}
            for t in (t for row in b.rows for t in row):
                key, sep, value = t[0].partition("=")
                if not sep or not value:
                    raise ParseError(f"expected key=value, got {t[0]!r}", t[1], t[2])
                if key not in ("mode", "ess", "mss"):
                    raise ParseError(f"unknown adapt option {key!r}", t[1], t[2])
                opts[key] = value
            adapt[b.name] = opts
    missing = [n for n in variables if n not in cpts]
    if missing:
        raise ParseError(f"no cpt for {', '.join(missing)}")
    net = NetworkDef(tuple(variables.values()), parents, cpts)
    return Document(net, adapt, experience)


def parse_network(text: str) -> NetworkDef:
    return parse_document(text).network


def format_number(x: float) -> str:
    """Shortest round-trip representation."""
    x = float(x)
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def _matrix_lines(kind: str, name: str, table: np.ndarray, labels: Iterable[str]) -> list[str]:
    lines = [f"{kind} {name} {{"]
    for row, label in zip(table, labels):
        body = " ".join(format_number(x) for x in row)
        lines.append(f"  {body}" + (f"  # {label}" if label else ""))
    lines.append("}")
    return lines


def serialize_network(
    net: NetworkDef,
    adapt: Mapping[str, Mapping[str, str]] | None = None,
    experience: Mapping[str, np.ndarray] | None = None,
) -> str:
    lines: list[str] = []
    for v in net.variables:
        lines.append(f"variable {v.name} {{ {' '.join(v.states)} }}")
    for v in net.variables:
        ps = net.parents[v.name]
        if ps:
            lines.append(f"parents {v.name} {{ {' '.join(ps)} }}")
    for v in net.variables:
        labels = [_config_label(net.parents[v.name], c) for c in net.parent_configs(v.name)]
        lines.extend(_matrix_lines("cpt", v.name, net.cpts[v.name], labels))
    for name, opts in (adapt or {}).items():
        body = " ".join(f"{k}={opts[k]}" for k in ("mode", "ess", "mss") if k in opts)
        lines.append(f"adapt {name} {{ {body} }}")
    for name, counts in (experience or {}).items():
        labels = [_config_label(net.parents[name], c) for c in net.parent_configs(name)]
        lines.extend(_matrix_lines("experience", name, counts, labels))
    return "\n".join(lines) + "\n"


def chest_clinic_text() -> str:
    return resources.files("adaptnet.data").joinpath("chest_clinic.net").read_text("utf-8")


def chest_clinic() -> NetworkDef:
    """The eight-variable chest-clinic network with its classical parameters."""
    return parse_network(chest_clinic_text())
