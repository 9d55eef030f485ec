"""Chest-clinic simulation experiments.

A cell of the factorial grid is one choice of

* R: data source. ``R1`` samples from the reference network and starts the
  learner from slightly tilted priors; ``R2`` samples from a strongly altered
  network while the learner starts from the reference; ``R3`` is R1 with the
  smoking rate falling linearly from 0.5 to 0.2 over the run.
* O: ``O1`` observes every variable, ``O2`` only asia, smoke, xray and dysp.
* P: prior sample size per row, 10 (``P1``) or 100 (``P2``).
* L: ``L1`` accumulates throughout; ``L2``/``L3`` switch to fading with
  MSS 1000 / 100 after case 1000.

``either`` (a logical OR) is fixed in every cell. Cases are drawn with
``numpy.random.default_rng(seed)`` (PCG64), one uniform per variable per case
in declared variable order, so every cell sharing (R, seed) sees the same data.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .adaptation import AdaptationSession, ExperienceTable, entry_variance, posterior_interval
from .inference import family_posteriors
from .network import Evidence, NetworkDef, chest_clinic, config_label

R_LEVELS = ("R1", "R2", "R3")
O_LEVELS = ("O1", "O2")
P_LEVELS = {"P1": 10.0, "P2": 100.0}
L_LEVELS = {"L1": None, "L2": 1000.0, "L3": 100.0}
O2_OBSERVED = ("asia", "smoke", "xray", "dysp")
LOGICAL = ("either",)
PRIOR_TILT = 0.5
N_CASES = 10_000
SWITCH_AT = 1_000

CSV_HEADER = ("case", "table", "parent_config", "state", "mean", "variance", "lo95", "hi95", "ess")


# ---------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True)
class DriftSchedule:
    """Linear interpolation of one variable's CPT from ``start`` to ``end``."""

    variable: str
    start: np.ndarray
    end: np.ndarray
    n_cases: int

    def cpt_at(self, n):
        """CPT at case index ``n`` (0-based); vectorized over an array of ``n``."""
        frac = np.asarray(n, dtype=np.float64)[..., None, None] / self.n_cases
        return self.start + frac * (self.end - self.start)


def drift_schedule_smoker(start: float, end: float, n: int) -> DriftSchedule:
    return DriftSchedule("smoke", np.array([[start, 1.0 - start]]), np.array([[end, 1.0 - end]]), n)


@dataclass(frozen=True)
class GroundTruth:
    base: NetworkDef
    drift: tuple[DriftSchedule, ...] = ()

    def network_at(self, n: int) -> NetworkDef:
        if not self.drift:
            return self.base
        return self.base.with_cpts({d.variable: d.cpt_at(n) for d in self.drift})


def tilt_priors(net: NetworkDef, shift: float = PRIOR_TILT, skip: Sequence[str] = LOGICAL) -> NetworkDef:
    """Multiply the first state's probability by ``exp(shift)`` and renormalize."""
    updates = {}
    for n in net.names:
        if n in skip:
            continue
        t = net.cpts[n].copy()
        t[:, 0] *= np.exp(shift)
        updates[n] = t / t.sum(axis=1, keepdims=True)
    return net.with_cpts(updates)


def reverse_remap(net: NetworkDef, skip: Sequence[str] = LOGICAL) -> NetworkDef:
    """Reverse every column's state order and squash through ``p -> 0.2 + 0.6 p``."""
    updates = {}
    for n in net.names:
        if n in skip:
            continue
        t = 0.2 + 0.6 * net.cpts[n][:, ::-1]
        updates[n] = t / t.sum(axis=1, keepdims=True)
    return net.with_cpts(updates)


def ground_truth(r: str, reference: NetworkDef | None = None, n_cases: int = N_CASES) -> GroundTruth:
    ref = chest_clinic() if reference is None else reference
    if r == "R1":
        return GroundTruth(ref)
    if r == "R2":
        return GroundTruth(reverse_remap(ref))
    if r == "R3":
        return GroundTruth(ref, (drift_schedule_smoker(0.5, 0.2, n_cases),))
    raise ValueError(f"unknown R level {r!r}")


def learner_prior(r: str, reference: NetworkDef | None = None) -> NetworkDef:
    ref = chest_clinic() if reference is None else reference
    if r in ("R1", "R3"):
        return tilt_priors(ref)
    if r == "R2":
        return ref
    raise ValueError(f"unknown R level {r!r}")


# ---------------------------------------------------------------------------
# sampling and masking


def _draw(gt: GroundTruth, first_case: int, u: np.ndarray) -> np.ndarray:
    """Ancestral sampling driven by uniforms ``u[case, variable]``."""
    net = gt.base
    n = u.shape[0]
    x = np.zeros(u.shape, dtype=np.int64)
    drift = {d.variable: d for d in gt.drift}
    case_idx = np.arange(first_case, first_case + n)
    for name in net.topological_order():
        v = net.index(name)
        cfg = np.zeros(n, dtype=np.int64)
        for p in net.parents[name]:
            cfg = cfg * net.card(p) + x[:, net.index(p)]
        if name in drift:
            probs = drift[name].cpt_at(case_idx)[np.arange(n), cfg]
        else:
            probs = net.cpts[name][cfg]
        thresholds = np.cumsum(probs, axis=1)[:, :-1]
        x[:, v] = (u[:, v, None] >= thresholds).sum(axis=1)
    return x


def sample_cases(gt: GroundTruth, n: int, rng: np.random.Generator, first_case: int = 0) -> np.ndarray:
    """``n`` complete cases as state indices, shape ``(n, n_variables)``."""
    u = rng.random((n, len(gt.base.variables)))
    return _draw(gt, first_case, u)


def forward_sample(gt: GroundTruth, n: int, rng: np.random.Generator) -> dict[str, str]:
    """One complete case at case index ``n``; consumes the same stream as :func:`sample_cases`."""
    x = _draw(gt, n, rng.random((1, len(gt.base.variables))))[0]
    return decode_case(gt.base, x)


def decode_case(net: NetworkDef, x: Sequence[int]) -> dict[str, str]:
    return {v.name: v.states[s] for v, s in zip(net.variables, x) if s >= 0}


def mask(case: Evidence, scheme: str) -> dict[str, str]:
    if scheme == "O1":
        return dict(case)
    if scheme == "O2":
        return {k: s for k, s in case.items() if k in O2_OBSERVED}
    raise ValueError(f"unknown observation scheme {scheme!r}")


def mask_indices(net: NetworkDef, cases: np.ndarray, scheme: str) -> np.ndarray:
    if scheme == "O1":
        return cases.copy()
    if scheme == "O2":
        out = np.full_like(cases, -1)
        keep = [net.index(n) for n in O2_OBSERVED]
        out[:, keep] = cases[:, keep]
        return out
    raise ValueError(f"unknown observation scheme {scheme!r}")


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentConfig:
    R: str
    O: str
    P: str
    L: str
    seed: int = 0
    n_cases: int = N_CASES
    switch_at: int = SWITCH_AT

    def __post_init__(self):
        for value, levels in ((self.R, R_LEVELS), (self.O, O_LEVELS), (self.P, P_LEVELS), (self.L, L_LEVELS)):
            if value not in levels:
                raise ValueError(f"invalid factor level {value!r}")

    @classmethod
    def parse(cls, cell: str, **kwargs) -> "ExperimentConfig":
        """From ``"R1,O2,P1,L3"`` (order free)."""
        levels = {}
        for tok in cell.replace("_", ",").split(","):
            tok = tok.strip().upper()
            if not tok or tok[0] not in "ROPL" or tok[0] in levels:
                raise ValueError(f"bad cell {cell!r}")
            levels[tok[0]] = tok
        if set(levels) != set("ROPL"):
            raise ValueError(f"bad cell {cell!r}: need one level each of R, O, P, L")
        return cls(levels["R"], levels["O"], levels["P"], levels["L"], **kwargs)

    @property
    def ess(self) -> float:
        return P_LEVELS[self.P]

    @property
    def mss(self) -> float | None:
        return L_LEVELS[self.L]

    @property
    def filename(self) -> str:
        return f"{self.R}_{self.O}_{self.P}_{self.L}_seed{self.seed}.csv"


def all_cells(seed: int = 0, **kwargs) -> list[ExperimentConfig]:
    return [ExperimentConfig(r, o, p, l, seed=seed, **kwargs)
            for r, o, p, l in itertools.product(R_LEVELS, O_LEVELS, P_LEVELS, L_LEVELS)]


@dataclass(frozen=True)
class TrackedEntry:
    """P(table = state | parents = parent_config)."""

    table: str
    parent_config: tuple[str, ...]
    state: str

    @classmethod
    def parse(cls, spec: str, net: NetworkDef) -> "TrackedEntry":
        """From ``var:parent=state&parent=state:state``; the middle part may be empty."""
        try:
            table, cfg, state = spec.split(":")
        except ValueError:
            raise ValueError(f"tracked entry {spec!r} is not var:parentconfig:state") from None
        given = dict(p.split("=", 1) for p in cfg.split("&") if p)
        parents = net.parents[table]
        if set(given) != set(parents):
            raise ValueError(f"tracked entry {spec!r} must set exactly the parents {parents} of {table}")
        entry = cls(table, tuple(given[p] for p in parents), state)
        entry.locate(net)
        return entry

    def locate(self, net: NetworkDef) -> tuple[int, int]:
        return net.config_index(self.table, self.parent_config), net.variable(self.table).index(self.state)

    def label(self, net: NetworkDef) -> str:
        return config_label(net.parents[self.table], self.parent_config)

    def spec(self, net: NetworkDef) -> str:
        return f"{self.table}:{self.label(net)}:{self.state}"


DEFAULT_TRACKED = (
    TrackedEntry("bronc", ("yes",), "yes"),
    TrackedEntry("dysp", ("no", "yes"), "yes"),
    TrackedEntry("smoke", (), "yes"),
)


@dataclass
class TrajectoryRecord:
    case: int
    table: str
    parent_config: str
    state: str
    mean: float
    variance: float
    lo95: float
    hi95: float
    ess: float

    def row(self) -> tuple:
        return (self.case, self.table, self.parent_config, self.state,
                repr(self.mean), repr(self.variance), repr(self.lo95), repr(self.hi95), repr(self.ess))


@dataclass
class ExperimentResult:
    """Per-case trajectories of the tracked entries.

    ``mean[n, j]`` and ``ess[n, j]`` hold the state after case ``n + 1``.
    ``snapshots[c]`` holds every learned CPT after case ``c``.
    """

    config: ExperimentConfig
    network: NetworkDef
    tracked: tuple[TrackedEntry, ...]
    mean: np.ndarray
    ess: np.ndarray
    final_network: NetworkDef
    tables: dict[str, ExperienceTable]
    snapshots: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    @property
    def variance(self) -> np.ndarray:
        return entry_variance(self.mean, self.ess)

    @property
    def interval(self) -> tuple[np.ndarray, np.ndarray]:
        return posterior_interval(self.mean, self.ess)

    def records(self) -> Iterator[TrajectoryRecord]:
        var = self.variance
        lo, hi = self.interval
        labels = [t.label(self.network) for t in self.tracked]
        for n in range(self.mean.shape[0]):
            for j, t in enumerate(self.tracked):
                yield TrajectoryRecord(n + 1, t.table, labels[j], t.state,
                                       float(self.mean[n, j]), float(var[n, j]),
                                       float(lo[n, j]), float(hi[n, j]), float(self.ess[n, j]))

    def write_csv(self, out) -> None:
        """Write to a path or a text stream."""
        if isinstance(out, (str, Path)):
            with open(out, "w", newline="", encoding="utf-8") as fh:
                self.write_csv(fh)
            return
        w = csv.writer(out, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for rec in self.records():
            w.writerow(rec.row())

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def experiment_cases(cfg: ExperimentConfig, reference: NetworkDef | None = None) -> np.ndarray:
    """The complete case stream shared by every cell with this (R, seed)."""
    gt = ground_truth(cfg.R, reference, cfg.n_cases)
    return sample_cases(gt, cfg.n_cases, np.random.default_rng(cfg.seed))


def initial_tables(prior: NetworkDef, ess: float) -> dict[str, ExperienceTable]:
    return {
        n: ExperienceTable.from_cpt(prior, n, ess=ess, mode="fixed" if n in LOGICAL else "accumulate")
        for n in prior.names
    }


def run_experiment(
    cfg: ExperimentConfig,
    tracked: Sequence[TrackedEntry] = DEFAULT_TRACKED,
    checkpoints: Sequence[int] = (),
    cases: np.ndarray | None = None,
    reference: NetworkDef | None = None,
) -> ExperimentResult:
    """Run one grid cell: sample, mask, adapt, and record after every case."""
    prior = learner_prior(cfg.R, reference)
    if cases is None:
        cases = experiment_cases(cfg, reference)
    observed = mask_indices(prior, cases, cfg.O)
    session = AdaptationSession(prior, initial_tables(prior, cfg.ess))
    tracked = tuple(tracked)
    where = [t.locate(prior) for t in tracked]
    views = [session.cpt(t.table) for t in tracked]
    n = cfg.n_cases
    mean = np.empty((n, len(tracked)))
    ess = np.empty((n, len(tracked)))
    snapshots: dict[int, dict[str, np.ndarray]] = {}
    wanted = set(checkpoints)
    if 0 in wanted:
        snapshots[0] = {name: session.cpt(name).copy() for name in prior.names}
    for i in range(n):
        if cfg.mss is not None and i == cfg.switch_at:
            for name, t in session.tables.items():
                if t.mode != "fixed":
                    session.set_mode(name, "fade", mss=cfg.mss)
            views = [session.cpt(t.table) for t in tracked]
        session.adapt_indices(observed[i])
        for j, t in enumerate(tracked):
            row, col = where[j]
            mean[i, j] = views[j][row, col]
            ess[i, j] = session.tables[t.table].counts[row].sum()
        if i + 1 in wanted:
            snapshots[i + 1] = {name: session.cpt(name).copy() for name in prior.names}
    return ExperimentResult(cfg, prior, tracked, mean, ess, session.network(), session.tables, snapshots)


def run_grid(cells: Sequence[ExperimentConfig], outdir: str | Path,
             tracked: Sequence[TrackedEntry] = DEFAULT_TRACKED) -> list[Path]:
    """Run cells and write one CSV each; case streams are shared per (R, seed)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    streams: dict[tuple, np.ndarray] = {}
    paths = []
    for cfg in cells:
        key = (cfg.R, cfg.seed, cfg.n_cases)
        if key not in streams:
            streams[key] = experiment_cases(cfg)
        result = run_experiment(cfg, tracked, cases=streams[key])
        path = outdir / cfg.filename
        result.write_csv(path)
        paths.append(path)
    return paths


def expected_config_counts(gt: NetworkDef, name: str, n: int) -> np.ndarray:
    """Expected number of cases hitting each parent configuration of ``name``."""
    return n * family_posteriors(gt, {}, [name])[name].parent_config_mass
