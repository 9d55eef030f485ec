"""Sequential adaptation of conditional probability tables.

Each adaptive variable owns an :class:`ExperienceTable`: one row of Dirichlet
counts per parent configuration. After each case the exact posterior of a row
is a mixture of Dirichlets; it is replaced by the single Dirichlet with the
mixture's means and the same average variance ``sum_i m_i v_i``. Tables in
fading mode have every count multiplied by ``q`` before each update, which
caps the long-run sample size at ``1 / (1 - q)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from ._kernels import ESS_MAX
from .inference import (
    DENSE_LIMIT,
    CompiledNetwork,
    ZeroProbabilityEvidence,
    family_posterior,
    posterior_marginal,
)
from .network import Evidence, NetworkDef, ParseError, parse_document, serialize_network

MODES = ("fixed", "accumulate", "fade")
Z95 = 1.959963984540054


class AdaptationError(ValueError):
    pass


class DegenerateInterval(AdaptationError):
    pass


class TooWideInterval(AdaptationError):
    pass


class MissingMSS(AdaptationError):
    pass


# ---------------------------------------------------------------------------
# scalar relations


def entry_variance(m, s):
    """Variance of one Dirichlet coordinate with mean ``m`` and sample size ``s``."""
    return m * (1.0 - m) / (s + 1.0)


def posterior_interval(m, s, z: float = Z95):
    """Approximate 95% interval ``m +/- z sd`` clipped to [0, 1]."""
    half = z * np.sqrt(entry_variance(m, s))
    return np.clip(m - half, 0.0, 1.0), np.clip(m + half, 0.0, 1.0)


def ess_from_interval(lo: float, hi: float, point: float | None = None) -> tuple[float, float]:
    """Translate "between lo and hi, about point" into (mean, sample size).

    The interval half-width is read as one standard deviation.
    """
    if not 0.0 <= lo <= hi <= 1.0:
        raise AdaptationError(f"need 0 <= lo <= hi <= 1, got ({lo}, {hi})")
    if hi == lo:
        raise DegenerateInterval(f"interval [{lo}, {hi}] has zero width")
    mean = (lo + hi) / 2.0 if point is None else float(point)
    if not lo <= mean <= hi:
        raise AdaptationError(f"point {mean} outside [{lo}, {hi}]")
    sd = (hi - lo) / 2.0
    ess = mean * (1.0 - mean) / sd**2 - 1.0
    if ess <= 0.0:
        raise TooWideInterval(f"interval [{lo}, {hi}] implies sample size {ess} <= 0")
    return mean, ess


def row_from_intervals(intervals: Sequence[tuple[float, float, float | None]]) -> np.ndarray:
    """Counts for one row from per-entry intervals; the row ESS is the minimum."""
    pairs = [ess_from_interval(*iv) for iv in intervals]
    means = np.array([m for m, _ in pairs])
    if abs(means.sum() - 1.0) > 1e-9:
        raise AdaptationError(f"interval points sum to {means.sum()}, not 1")
    return min(e for _, e in pairs) * means


def fading_factor_from_mss(mss: float) -> float:
    if not mss > 1.0:
        raise AdaptationError(f"maximal sample size must exceed 1, got {mss}")
    return (mss - 1.0) / mss


def default_ess(k: int) -> float:
    return 5.0 * k


def default_mss(n_entries: int) -> float:
    # taken literally: shrinks as the table grows
    return 100.0 / n_entries


def fading_bound(s0: float, q: float, n: int) -> float:
    """Largest sample size reachable from ``s0`` after ``n`` fade+case cycles."""
    return q**n * s0 + (1.0 - q**n) / (1.0 - q)


# ---------------------------------------------------------------------------
# one row


@dataclass(frozen=True)
class RetrievalResult:
    means: np.ndarray
    ess: float
    variances: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.ess * self.means


def _weights(w, w0):
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0.0):
        raise AdaptationError("negative family weight")
    if w0 is None:
        w0 = max(1.0 - float(w.sum()), 0.0)
    elif w0 < 0.0 or abs(w0 + w.sum() - 1.0) > 1e-9:
        raise AdaptationError(f"weights sum to {w0 + w.sum()}, expected 1")
    return w, float(w0)


def _mixture_terms(a: np.ndarray, w: np.ndarray, w0: float):
    k = a.size
    eye = np.eye(k)
    rest = (1.0 - eye) @ a
    s = a.sum()
    m = a / s
    mstar = (m * s + w + m * w0) / (s + 1.0)
    # row j: the component that saw state j; within = mean * (1 - mean) of it
    within = np.where(eye > 0.0, (a + 1.0) * rest, a * (rest + 1.0)) / (s + 1.0) ** 2
    # shifts of each component mean from m*; 1 - w_i is the sum of the other weights
    wrest = (1.0 - eye) @ w
    shift = np.where(eye > 0.0, wrest + w0 * rest / s, -(w + w0 * m)) / (s + 1.0)
    within0 = a * rest / (s * s)
    shift0 = (a * wrest - w * rest) / (s * (s + 1.0))
    v = w0 * (within0 / (s + 1.0) + shift0**2) + w @ (within / (s + 2.0) + shift**2)
    # m*(1 - m*) - v, summed over components so it never cancels
    slack = w0 * within0 * s / (s + 1.0) + (w @ within) * (s + 1.0) / (s + 2.0)
    return mstar, v, slack


def mixture_moments(counts, w, w0=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and variance of ``w0 Dir(a) + sum_j w_j Dir(a + e_j)``.

    The mean is computed as m_i* = (m_i s + w_i + m_i w0) / (s + 1); the
    variance by the law of total variance over the mixture components.
    Complements like ``1 - m_i`` are formed as sums over the other states so
    that nearly degenerate rows keep their precision.
    """
    a = np.asarray(counts, dtype=np.float64)
    w, w0 = _weights(w, w0)
    mstar, v, _ = _mixture_terms(a, w, w0)
    return mstar, v


def refit_ess(mstar: np.ndarray, v: np.ndarray) -> float:
    """Sample size making the Dirichlet average variance equal ``sum m* v*``."""
    den = float(np.dot(mstar, v))
    if den <= 0.0:
        return ESS_MAX
    complement = (1.0 - np.eye(mstar.size)) @ mstar
    s = float(np.sum(mstar**2 * complement)) / den - 1.0
    if s <= 0.0:
        raise AdaptationError(f"refitted sample size {s} is not positive")
    return min(s, ESS_MAX)


def retrieve(counts, w, w0=None) -> RetrievalResult:
    """Update one row from ``w_i = P(a_i, config | E)`` and ``w0 = 1 - P(config | E)``.

    A fully observed family adds exactly one count; a case that puts no mass
    on the configuration leaves the row untouched. The refitted sample size
    equals :func:`refit_ess` but is formed as a ratio of two non-negative
    sums, which keeps it accurate for rows that have faded to almost nothing.
    """
    a = np.asarray(counts, dtype=np.float64)
    w, w0 = _weights(w, w0)
    s = a.sum()
    if s <= 0.0:
        raise AdaptationError("row has zero sample size")
    mstar, v, slack = _mixture_terms(a, w, w0)
    if w0 == 1.0 or not w.any():
        return RetrievalResult(a / s, float(s), v)
    hot = np.flatnonzero(w)
    if hot.size == 1 and w[hot[0]] == 1.0:
        new = a.copy()
        new[hot[0]] += 1.0
        return RetrievalResult(new / (s + 1.0), float(s + 1.0), v)
    den = float(np.dot(mstar, v))
    ess = min(float(np.dot(mstar, slack)) / den, ESS_MAX) if den > 0.0 else ESS_MAX
    return RetrievalResult(mstar, ess, v)


def fractional_update(counts, w) -> np.ndarray:
    """Add the posterior family mass straight onto the counts (contrast baseline)."""
    w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0.0) or w.sum() > 1.0 + 1e-9:
        raise AdaptationError("fractional weights must be non-negative and sum to at most 1")
    return np.asarray(counts, dtype=np.float64) + w


# ---------------------------------------------------------------------------
# tables


@dataclass(eq=False)
class ExperienceTable:
    """Dirichlet counts for one variable, one row per parent configuration.

    ``ess`` and ``mss`` are the configured values (``None`` means the default)
    and only matter when counts are initialized or fading is switched on.
    """

    child: str
    parents: tuple[str, ...]
    counts: np.ndarray
    mode: str = "accumulate"
    q: float | None = None
    ess: float | None = None
    mss: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise AdaptationError(f"unknown mode {self.mode!r}")
        self.counts = np.array(self.counts, dtype=np.float64)
        if self.counts.ndim != 2:
            raise AdaptationError("counts must be (n_configs, k)")
        if np.any(self.counts < 0.0):
            raise AdaptationError(f"negative counts in table {self.child}")
        if self.mode == "fade":
            if self.q is None:
                self.q = fading_factor_from_mss(self.resolved_mss())
            if not 0.0 < self.q < 1.0:
                raise AdaptationError(f"fading factor must be in (0, 1), got {self.q}")
        else:
            self.q = None

    @classmethod
    def from_cpt(cls, net: NetworkDef, name: str, ess: float | None = None,
                 mode: str = "accumulate", mss: float | None = None) -> "ExperienceTable":
        k = net.card(name)
        s = default_ess(k) if ess is None else float(ess)
        return cls(name, net.parents[name], s * net.cpts[name], mode=mode, ess=ess, mss=mss)

    @property
    def k(self) -> int:
        return self.counts.shape[1]

    @property
    def n_entries(self) -> int:
        return self.counts.size

    @property
    def row_ess(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def means(self) -> np.ndarray:
        return self.counts / self.row_ess[:, None]

    def resolved_mss(self) -> float:
        return default_mss(self.n_entries) if self.mss is None else self.mss

    def copy(self) -> "ExperienceTable":
        return replace(self, counts=self.counts.copy())


def fade(table: ExperienceTable) -> ExperienceTable:
    if table.mode != "fade":
        raise AdaptationError(f"table {table.child} is not in fading mode")
    return replace(table, counts=table.counts * table.q)


def disseminate(table: ExperienceTable) -> np.ndarray:
    """CPT rows ``alpha_i / s``."""
    s = table.row_ess
    if np.any(s <= 0.0):
        raise AdaptationError(f"table {table.child} has a row with zero sample size")
    return table.counts / s[:, None]


def set_mode(table: ExperienceTable, mode: str, mss: float | str | None = None) -> ExperienceTable:
    """Change adaptation mode between cases; counts are never touched.

    Switching to ``fade`` needs a maximal sample size: pass ``mss`` (a number,
    or ``"default"`` for ``100 / n_entries``) unless the table already has one.
    """
    if mode not in MODES:
        raise AdaptationError(f"unknown mode {mode!r}")
    new_mss = table.mss
    if mss == "default":
        new_mss = None
    elif mss is not None:
        new_mss = float(mss)
    if mode == "fade":
        if mss is None and table.mss is None:
            raise MissingMSS(f"switching {table.child} to fading needs a maximal sample size")
        q = fading_factor_from_mss(default_mss(table.n_entries) if new_mss is None else new_mss)
        return replace(table, counts=table.counts.copy(), mode=mode, q=q, mss=new_mss)
    return replace(table, counts=table.counts.copy(), mode=mode, q=None, mss=new_mss)


# ---------------------------------------------------------------------------
# adapting a network from cases


class AdaptationSession:
    """Owns a network and its experience tables and adapts them case by case.

    On construction every non-fixed table is disseminated into the network so
    CPTs and counts agree.
    """

    def __init__(self, net: NetworkDef, tables: Mapping[str, ExperienceTable]):
        self._template = net
        self.tables = {n: t.copy() for n, t in tables.items()}
        for n, t in self.tables.items():
            if t.counts.shape != (net.n_configs(n), net.card(n)):
                raise AdaptationError(f"table {n} does not match the network shape")
        self._comp = CompiledNetwork(net)
        self._dense = self._comp.state_space <= DENSE_LIMIT
        self.n_cases = 0
        for n, t in self.tables.items():
            if t.mode != "fixed":
                self._comp.cpt_view(net.index(n))[:] = disseminate(t)

    def network(self) -> NetworkDef:
        cpts = {n: self._comp.cpt_view(i).copy() for i, n in enumerate(self._comp.names)}
        return NetworkDef(self._template.variables, self._template.parents, cpts)

    def cpt(self, name: str) -> np.ndarray:
        return self._comp.cpt_view(self._template.index(name))

    def set_mode(self, name: str, mode: str, mss: float | str | None = None) -> None:
        table = set_mode(self.tables[name], mode, mss)
        self.tables[name] = table
        if mode != "fixed":
            self.cpt(name)[:] = disseminate(table)

    def _family_weights(self, ev: np.ndarray) -> dict[str, np.ndarray]:
        names = [n for n, t in self.tables.items() if t.mode != "fixed"]
        if self._dense:
            fam, total = self._comp.family_joint(ev)
            if not total > 0.0:
                raise ZeroProbabilityEvidence(f"case {self.n_cases + 1} has probability zero")
            out = {}
            for n in names:
                v = self._template.index(n)
                off = self._comp.cpt_off[v]
                out[n] = (fam[off: off + self._comp.sizes[v]] / total).reshape(-1, self._comp.cards[v])
            return out
        net = self.network()
        evidence = {net.names[i]: net.variables[i].states[s] for i, s in enumerate(ev) if s >= 0}
        return {n: family_posterior(net, evidence, n).table for n in names}

    def adapt_indices(self, ev: np.ndarray) -> None:
        """Process one case given as state indices (``-1`` = unobserved)."""
        weights = self._family_weights(ev)  # before any table changes
        for n, w in weights.items():
            t = self.tables[n]
            counts = t.counts * t.q if t.mode == "fade" else t.counts
            counts = _kernels.moment_match(counts, w)
            s = counts.sum(axis=1)
            if not np.all(s > 0.0):
                raise AdaptationError(f"table {n} lost all sample size after case {self.n_cases + 1}")
            t.counts = counts
            self.cpt(n)[:] = counts / s[:, None]
        self.n_cases += 1

    def adapt(self, case: Evidence) -> None:
        self.adapt_indices(self._template.evidence_indices(case))


def adapt_case(net: NetworkDef, tables: Mapping[str, ExperienceTable],
               case: Evidence) -> tuple[NetworkDef, dict[str, ExperienceTable]]:
    """Adapt copies of ``net``/``tables`` from one case; inputs are not modified."""
    session = AdaptationSession(net, tables)
    session.adapt(case)
    return session.network(), session.tables


def adaptive_tables(net: NetworkDef, ess: float | None = None,
                    fixed: Sequence[str] = ()) -> dict[str, ExperienceTable]:
    """Accumulating tables for every variable, ``fixed`` ones left fixed."""
    return {
        n: ExperienceTable.from_cpt(net, n, ess=ess, mode="fixed" if n in fixed else "accumulate")
        for n in net.names
    }


# ---------------------------------------------------------------------------
# explicit type variables


def type_variable_adapt(net: NetworkDef, type_var: str, case: Evidence) -> NetworkDef:
    """Install the posterior of root ``type_var`` given ``case`` as its new prior."""
    if net.parents[type_var]:
        raise AdaptationError(f"type variable {type_var} must be a root")
    post = posterior_marginal(net, case, type_var)
    return net.with_cpts({type_var: post.probs[None, :]})


def summed_out_cpt(net: NetworkDef, child: str, type_var: str) -> tuple[tuple[str, ...], np.ndarray]:
    """P(child | other parents) with the type variable summed out under its prior."""
    ps = net.parents[child]
    if type_var not in ps:
        raise AdaptationError(f"{type_var} is not a parent of {child}")
    prior = net.cpts[type_var][0]
    shape = [net.card(p) for p in ps] + [net.card(child)]
    table = net.cpts[child].reshape(shape)
    axis = ps.index(type_var)
    mixed = np.tensordot(table, prior, axes=([axis], [0]))
    rest = tuple(p for p in ps if p != type_var)
    return rest, mixed.reshape(-1, net.card(child))


# ---------------------------------------------------------------------------
# snapshot files


def _opt_number(value: str, key: str, name: str) -> float | None:
    if value == "default":
        return None
    try:
        return float(value)
    except ValueError:
        raise ParseError(f"adapt {name}: {key} must be a number or 'default', got {value!r}") from None


def parse_snapshot(text: str) -> tuple[NetworkDef, dict[str, ExperienceTable]]:
    """Network plus experience tables from a file with ``adapt``/``experience`` blocks.

    Variables with neither block are static and get no table. Tables without
    an ``experience`` block start from ``cpt * ess``.
    """
    doc = parse_document(text)
    net = doc.network
    tables = {}
    for name in net.names:
        opts = doc.adapt.get(name)
        if opts is None and name not in doc.experience:
            continue
        opts = opts or {}
        mode = opts.get("mode", "accumulate")
        if mode not in MODES:
            raise ParseError(f"adapt {name}: unknown mode {mode!r}")
        ess = _opt_number(opts.get("ess", "default"), "ess", name)
        mss = _opt_number(opts.get("mss", "default"), "mss", name)
        if name in doc.experience:
            counts = doc.experience[name]
        else:
            s = default_ess(net.card(name)) if ess is None else ess
            counts = s * net.cpts[name]
        try:
            tables[name] = ExperienceTable(name, net.parents[name], counts, mode=mode, ess=ess, mss=mss)
        except AdaptationError as exc:
            raise ParseError(str(exc)) from None
    return net, tables


def serialize_snapshot(net: NetworkDef, tables: Mapping[str, ExperienceTable]) -> str:
    def num(x):
        return "default" if x is None else repr(float(x))

    adapt = {n: {"mode": t.mode, "ess": num(t.ess), "mss": num(t.mss)} for n, t in tables.items()}
    experience = {n: t.counts for n, t in tables.items()}
    return serialize_network(net, adapt=adapt, experience=experience)


def row_interval_table(net: NetworkDef, name: str,
                       intervals: Sequence[Sequence[tuple[float, float, float | None]]],
                       mode: str = "accumulate") -> ExperienceTable:
    """Table whose rows come from per-entry elicited intervals."""
    rows = [row_from_intervals(r) for r in intervals]
    if len(rows) != net.n_configs(name):
        raise AdaptationError(f"{name} needs {net.n_configs(name)} rows of intervals")
    return ExperienceTable(name, net.parents[name], np.array(rows), mode=mode)
