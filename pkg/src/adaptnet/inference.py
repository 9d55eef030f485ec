"""Exact inference on discrete networks.

Single queries go through variable elimination with a greedy min-fill order.
:func:`family_posteriors` answers the family query for many variables at once
and, when the unobserved state space is small, enumerates it directly with the
compiled kernel; this is the path used per case during adaptation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .network import Evidence, NetworkDef

BRUTE_FORCE_LIMIT = 10**7
DENSE_LIMIT = 1 << 16


class ZeroProbabilityEvidence(ValueError):
    """The evidence has probability zero under the network."""


class StateSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Distribution:
    variable: str
    states: tuple[str, ...]
    probs: np.ndarray

    def __getitem__(self, state: str) -> float:
        return float(self.probs[self.states.index(state)])


@dataclass(frozen=True)
class FamilyPosterior:
    """P(child = a_i, parents = config_j | E) as ``table[j, i]``."""

    child: str
    parents: tuple[str, ...]
    table: np.ndarray

    @property
    def parent_config_mass(self) -> np.ndarray:
        return self.table.sum(axis=1)

    def child_marginal(self) -> np.ndarray:
        return self.table.sum(axis=0)


@dataclass(frozen=True)
class JointTable:
    """Posterior joint over the unobserved variables (axes in declared order)."""

    variables: tuple[str, ...]
    probs: np.ndarray
    evidence_probability: float


# ---------------------------------------------------------------------------
# brute force (verification oracle)


def brute_force_joint(net: NetworkDef, evidence: Evidence | None = None) -> JointTable:
    """Enumerate every evidence-consistent configuration and renormalize."""
    ev = net.evidence_indices(evidence)
    free = [i for i in range(len(net.variables)) if ev[i] < 0]
    cards = [net.variables[i].k for i in free]
    if math.prod(cards) > BRUTE_FORCE_LIMIT:
        raise StateSpaceTooLarge(f"{math.prod(cards)} configurations exceed {BRUTE_FORCE_LIMIT}")
    names = net.names
    parent_pos = [[net.index(p) for p in net.parents[n]] for n in names]
    parent_cards = [[net.variables[p].k for p in pp] for pp in parent_pos]
    cpts = [net.cpts[n].tolist() for n in names]
    probs = np.zeros(cards)
    x = [int(s) for s in ev]
    for states in itertools.product(*(range(c) for c in cards)):
        for i, s in zip(free, states):
            x[i] = s
        p = 1.0
        for v in range(len(names)):
            cfg = 0
            for pi, pc in zip(parent_pos[v], parent_cards[v]):
                cfg = cfg * pc + x[pi]
            p *= cpts[v][cfg][x[v]]
        probs[states] = p
    total = probs.sum()
    if total <= 0.0:
        raise ZeroProbabilityEvidence("evidence has probability zero")
    return JointTable(tuple(names[i] for i in free), probs / total, float(total))


def marginal_from_joint(net: NetworkDef, joint: JointTable, evidence: Evidence | None,
                        variables: Sequence[str]) -> np.ndarray:
    """Posterior over ``variables`` (axes in the given order) from a joint table."""
    ev = dict(evidence or {})
    letters = {n: i for i, n in enumerate(joint.variables)}
    free_q = [v for v in variables if v not in ev]
    sub = np.einsum(joint.probs, list(range(len(joint.variables))), [letters[v] for v in free_q])
    out = np.zeros([net.card(v) for v in variables])
    idx = tuple(slice(None) if v not in ev else net.variable(v).index(ev[v]) for v in variables)
    out[idx] = sub
    return out


# ---------------------------------------------------------------------------
# variable elimination


class Factor:
    __slots__ = ("vars", "values")

    def __init__(self, vars: Sequence[int], values: np.ndarray):
        self.vars = tuple(vars)
        self.values = values

    def __mul__(self, other: "Factor") -> "Factor":
        out = tuple(dict.fromkeys(self.vars + other.vars))
        return Factor(out, np.einsum(self.values, list(self.vars), other.values, list(other.vars), list(out)))

    def sum_out(self, var: int) -> "Factor":
        return Factor([v for v in self.vars if v != var], self.values.sum(axis=self.vars.index(var)))


def _cpt_factor(net: NetworkDef, v: int, ev: np.ndarray) -> Factor:
    name = net.names[v]
    ps = [net.index(p) for p in net.parents[name]]
    table = net.cpts[name].reshape([net.variables[p].k for p in ps] + [net.variables[v].k])
    scope = ps + [v]
    idx = tuple(int(ev[u]) if ev[u] >= 0 else slice(None) for u in scope)
    return Factor([u for u in scope if ev[u] < 0], table[idx])


def _ancestral_set(net: NetworkDef, roots: Iterable[int]) -> set[int]:
    keep: set[int] = set()
    stack = list(roots)
    while stack:
        v = stack.pop()
        if v in keep:
            continue
        keep.add(v)
        stack.extend(net.index(p) for p in net.parents[net.names[v]])
    return keep


def min_fill_order(scopes: Sequence[Sequence[int]], eliminate: Iterable[int]) -> list[int]:
    """Greedy elimination order: fewest fill-in edges, ties by degree then index."""
    adj: dict[int, set[int]] = {}
    for scope in scopes:
        for u in scope:
            adj.setdefault(u, set()).update(w for w in scope if w != u)
    todo = set(eliminate)
    for u in todo:
        adj.setdefault(u, set())
    order = []
    while todo:
        def cost(u):
            nb = list(adj[u])
            fill = sum(1 for a, b in itertools.combinations(nb, 2) if b not in adj[a])
            return (fill, len(nb), u)
        u = min(todo, key=cost)
        nb = adj.pop(u)
        for a in nb:
            adj[a].discard(u)
            adj[a].update(nb - {a})
        todo.remove(u)
        order.append(u)
    return order


def _eliminate(net: NetworkDef, ev: np.ndarray, keep: Sequence[int]) -> tuple[np.ndarray, float]:
    """Unnormalized P(keep, e) with axes in ``keep`` order, and P(e)."""
    relevant = _ancestral_set(net, list(keep) + [i for i in range(len(ev)) if ev[i] >= 0])
    factors = [_cpt_factor(net, v, ev) for v in sorted(relevant)]
    free_keep = [v for v in keep if ev[v] < 0]
    hidden = [v for v in relevant if ev[v] < 0 and v not in free_keep]
    for v in min_fill_order([f.vars for f in factors], hidden):
        touching = [f for f in factors if v in f.vars]
        if not touching:
            continue
        factors = [f for f in factors if v not in f.vars]
        prod = touching[0]
        for f in touching[1:]:
            prod = prod * f
        factors.append(prod.sum_out(v))
    result = Factor((), np.array(1.0))
    for f in factors:
        result = result * f
    values = np.einsum(result.values, list(result.vars), free_keep) if free_keep else result.values
    total = float(values.sum())
    out = np.zeros([net.variables[v].k for v in keep])
    idx = tuple(int(ev[v]) if ev[v] >= 0 else slice(None) for v in keep)
    out[idx] = values
    return out, total


def posterior_marginal(net: NetworkDef, evidence: Evidence | None, variable: str) -> Distribution:
    ev = net.evidence_indices(evidence)
    v = net.index(variable)
    table, total = _eliminate(net, ev, [v])
    if total <= 0.0:
        raise ZeroProbabilityEvidence("evidence has probability zero")
    return Distribution(variable, net.variable(variable).states, table / total)


def family_posterior(net: NetworkDef, evidence: Evidence | None, child: str) -> FamilyPosterior:
    ev = net.evidence_indices(evidence)
    ps = net.parents[child]
    keep = [net.index(p) for p in ps] + [net.index(child)]
    table, total = _eliminate(net, ev, keep)
    if total <= 0.0:
        raise ZeroProbabilityEvidence("evidence has probability zero")
    k = net.card(child)
    return FamilyPosterior(child, ps, (table / total).reshape(-1, k))


def evidence_probability(net: NetworkDef, evidence: Evidence | None) -> float:
    ev = net.evidence_indices(evidence)
    return _eliminate(net, ev, [])[1]


# ---------------------------------------------------------------------------
# batched family posteriors


class CompiledNetwork:
    """Flat array layout of a network for the per-case kernels.

    ``cpt_flat[cpt_off[v] + config * k_v + state]`` holds the CPT entry. The
    array is owned by the instance and may be updated in place.
    """

    def __init__(self, net: NetworkDef):
        self.names = net.names
        n = len(self.names)
        self.cards = np.array([v.k for v in net.variables], dtype=np.int64)
        max_p = max((len(net.parents[x]) for x in self.names), default=0)
        self.par_idx = np.zeros((n, max(max_p, 1)), dtype=np.int64)
        self.par_stride = np.zeros((n, max(max_p, 1)), dtype=np.int64)
        self.n_par = np.zeros(n, dtype=np.int64)
        sizes = []
        for v, name in enumerate(self.names):
            ps = [net.index(p) for p in net.parents[name]]
            self.n_par[v] = len(ps)
            stride = 1
            for j in range(len(ps) - 1, -1, -1):
                self.par_idx[v, j] = ps[j]
                self.par_stride[v, j] = stride
                stride *= self.cards[ps[j]]
            sizes.append(stride * self.cards[v])
        self.cpt_off = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.sizes = sizes
        self.cpt_flat = np.concatenate([net.cpts[x].ravel() for x in self.names]) if n else np.zeros(0)
        self.parents = {x: net.parents[x] for x in self.names}

    @cached_property
    def state_space(self) -> int:
        return int(np.prod(self.cards))

    def cpt_view(self, v: int) -> np.ndarray:
        off = self.cpt_off[v]
        return self.cpt_flat[off: off + self.sizes[v]].reshape(-1, self.cards[v])

    def family_joint(self, ev: np.ndarray) -> tuple[np.ndarray, float]:
        return _kernels.dense_family_joint(
            self.cards, self.par_idx, self.par_stride, self.n_par,
            self.cpt_off, self.cpt_flat, np.asarray(ev, dtype=np.int64))


def family_posteriors(net: NetworkDef, evidence: Evidence | None,
                      children: Sequence[str] | None = None) -> dict[str, FamilyPosterior]:
    """Family posteriors for ``children`` (default: all variables)."""
    children = list(net.names if children is None else children)
    ev = net.evidence_indices(evidence)
    space = math.prod(net.variables[i].k for i in range(len(ev)) if ev[i] < 0)
    if space > DENSE_LIMIT:
        return {c: family_posterior(net, evidence, c) for c in children}
    comp = CompiledNetwork(net)
    fam, total = comp.family_joint(ev)
    if total <= 0.0:
        raise ZeroProbabilityEvidence("evidence has probability zero")
    out = {}
    for c in children:
        v = net.index(c)
        off = comp.cpt_off[v]
        table = fam[off: off + comp.sizes[v]].reshape(-1, comp.cards[v]) / total
        out[c] = FamilyPosterior(c, net.parents[c], table)
    return out
