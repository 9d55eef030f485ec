"""Acceptance criteria, one test per criterion.

Seeds are fixed up front: 0 for single-cell runs, 0..4 where averaging over
seeds is required. The terminal summary prints one PASS/FAIL line per test.
"""

import numpy as np
import pytest
from helpers import random_evidence, random_network

from adaptnet import _kernels
from adaptnet.adaptation import (
    ExperienceTable,
    ess_from_interval,
    fade,
    fractional_update,
    mixture_moments,
    parse_snapshot,
    refit_ess,
    retrieve,
    row_from_intervals,
    serialize_snapshot,
)
from adaptnet.inference import (
    ZeroProbabilityEvidence,
    brute_force_joint,
    family_posterior,
    family_posteriors,
    marginal_from_joint,
    posterior_marginal,
)
from adaptnet.network import parse_network, serialize_network
from adaptnet.simulation import (
    ExperimentConfig,
    expected_config_counts,
    ground_truth,
    run_experiment,
    run_grid,
)

SEED = 0


def test_criterion_1_interval_elicitation():
    mean, ess = ess_from_interval(0.3, 0.4, 0.35)
    counts = row_from_intervals([(0.3, 0.4, 0.35), (0.6, 0.7, 0.65)])
    np.testing.assert_allclose([mean * ess, (1 - mean) * ess], [31.5, 58.5], atol=1e-9)
    np.testing.assert_allclose(counts, [31.5, 58.5], atol=1e-9)


def _mixture_draws(rng, a, w, w0, n):
    k = a.size
    comp = rng.choice(k + 1, size=n, p=np.r_[w0, w])
    alpha = a + np.eye(k + 1, k, -1)[comp]
    g = rng.standard_gamma(alpha)
    return g / g.sum(axis=1, keepdims=True)


def test_criterion_2_mixture_moments_monte_carlo():
    rng = np.random.default_rng(SEED)
    n = 10**6
    worst = 0.0
    for _ in range(200):
        k = int(rng.integers(2, 5))
        s = rng.uniform(2.0, 100.0)
        a = s * rng.dirichlet(np.ones(k))
        p = rng.dirichlet(np.ones(k + 1))
        w, w0 = p[1:], p[0]

        mstar, v = mixture_moments(a, w, w0)
        r = retrieve(a, w, w0)
        np.testing.assert_allclose(r.means, mstar, atol=1e-12)
        analytic = w0 * a / s + sum(w[j] * (a + np.eye(k)[j]) / (s + 1) for j in range(k))
        np.testing.assert_allclose(mstar, analytic, atol=1e-12)

        x = _mixture_draws(rng, a, w, w0, n)
        emp_m = x.mean(axis=0)
        c = x - emp_m
        emp_v = (c**2).mean(axis=0)
        se_m = np.sqrt(emp_v / n)
        se_v = np.sqrt(((c**4).mean(axis=0) - emp_v**2) / n)
        z = max(np.max(np.abs(emp_m - mstar) / se_m), np.max(np.abs(emp_v - v) / se_v))
        worst = max(worst, z)
        assert z <= 4.0, (a, w, w0, z)
    print(f"largest deviation {worst:.2f} standard errors")


def test_criterion_3_collapse_identities(chest):
    rng = np.random.default_rng(SEED)
    for _ in range(100):
        k = int(rng.integers(2, 5))
        a = rng.uniform(0.5, 40.0, size=k)
        s = a.sum()
        for i in range(k):
            # complete observation of the family
            e = np.eye(k)[i]
            r = retrieve(a, e, 0.0)
            np.testing.assert_allclose(r.counts, a + e, atol=1e-12)
            mstar, v = mixture_moments(a, e, 0.0)
            np.testing.assert_allclose(mstar, (a + e) / (s + 1), atol=1e-12)
            assert refit_ess(mstar, v) == pytest.approx(s + 1, abs=1e-12 * (s + 1))
        # parents observed, child missing
        m = a / s
        for w, w0 in ((m, 0.0), (np.zeros(k), 1.0), (0.3 * m, 0.7)):
            r = retrieve(a, w, w0)
            np.testing.assert_allclose(r.means, m, atol=1e-12)
            assert r.ess == pytest.approx(s, abs=1e-12 * s)
            mstar, v = mixture_moments(a, w, w0)
            np.testing.assert_allclose(mstar, m, atol=1e-12)
            assert refit_ess(mstar, v) == pytest.approx(s, rel=1e-12)
        for kernel in (_kernels._moment_match_np, _kernels._moment_match_nb):
            out = kernel(np.array([a, a]), np.array([np.eye(k)[0], m]))
            np.testing.assert_allclose(out[0], a + np.eye(k)[0], atol=1e-12)
            np.testing.assert_allclose(out[1], a, rtol=1e-12)
        # fractional updating adds the full parent-configuration mass
        frac = fractional_update(a, m)
        assert frac.sum() - s == pytest.approx(1.0, abs=1e-12)

    table = ExperienceTable.from_cpt(chest, "bronc", ess=10.0)
    fam = family_posterior(chest, {"smoke": "yes"}, "bronc")
    row = chest.config_index("bronc", ("yes",))
    mass = fam.parent_config_mass[row]
    assert mass == pytest.approx(1.0, abs=1e-12)
    r = retrieve(table.counts[row], fam.table[row])
    assert r.ess == pytest.approx(10.0, abs=1e-12)
    np.testing.assert_allclose(r.means, chest.cpts["bronc"][row], atol=1e-12)
    frac = fractional_update(table.counts[row], fam.table[row])
    assert frac.sum() - 10.0 == pytest.approx(mass, abs=1e-12)


def _check_against_enumeration(net, e):
    joint = brute_force_joint(net, e)
    batch = family_posteriors(net, e)
    for name in net.names:
        oracle = marginal_from_joint(net, joint, e, [name])
        np.testing.assert_allclose(posterior_marginal(net, e, name).probs, oracle, atol=1e-9)
        fam = marginal_from_joint(net, joint, e, list(net.parents[name]) + [name]).reshape(-1, net.card(name))
        np.testing.assert_allclose(family_posterior(net, e, name).table, fam, atol=1e-9)
        np.testing.assert_allclose(batch[name].table, fam, atol=1e-9)


def test_criterion_4_inference_exactness(chest):
    rng = np.random.default_rng(SEED)
    done = 0
    while done < 50:
        e = random_evidence(rng, chest)
        try:
            _check_against_enumeration(chest, e)
        except ZeroProbabilityEvidence:
            continue
        done += 1
    for _ in range(50):
        net = random_network(rng, 6)
        while True:
            e = random_evidence(rng, net)
            try:
                _check_against_enumeration(net, e)
                break
            except ZeroProbabilityEvidence:
                continue


def test_criterion_5_fading_bound():
    q = 0.99
    t = ExperienceTable("x", (), [[5.0, 5.0]], mode="fade", q=q)
    for n in range(1, 501):
        t = fade(t)
        t.counts[0] = retrieve(t.counts[0], [1.0, 0.0], 0.0).counts
        s = t.counts.sum()
        assert s == pytest.approx(q**n * 10 + (1 - q**n) / (1 - q), abs=1e-9)
        assert s <= 100.0


def test_criterion_6_complete_data_convergence(chest):
    cfg = ExperimentConfig("R1", "O1", "P1", "L1", seed=SEED)
    res = run_experiment(cfg, checkpoints=(50, 1000, 2000, 10_000))
    misses = []
    for case, tol in ((10_000, 0.03), (2_000, 0.05)):
        for name in chest.names:
            if name == "either":
                continue
            counts = expected_config_counts(chest, name, case)
            err = np.abs(res.snapshots[case][name] - chest.cpts[name])
            for j in np.nonzero(counts >= 100)[0]:
                if err[j].max() > tol:
                    misses.append(f"{name} row {j} at case {case}: error {err[j].max():.4f} > {tol}")
    truth = np.array([chest.cpts[t.table][t.locate(chest)] for t in res.tracked])
    early = np.abs(res.mean[49] - truth).mean()
    late = np.abs(res.mean[999] - truth).mean()
    if late > 0.5 * early:
        misses.append(f"tracked error {late:.4f} at case 1000 exceeds half of {early:.4f} at case 50")
    assert not misses, "; ".join(misses)


def test_criterion_7_hidden_variable_artifact(chest):
    cfg = ExperimentConfig("R1", "O2", "P1", "L1", seed=SEED)
    res = run_experiment(cfg)
    truth = posterior_marginal(chest, {"smoke": "yes"}, "dysp")["yes"]
    learned = posterior_marginal(res.final_network, {"smoke": "yes"}, "dysp")["yes"]
    assert abs(learned - truth) <= 0.03
    j = [t.table for t in res.tracked].index("bronc")
    true_bronc = chest.cpts["bronc"][res.tracked[j].locate(chest)]
    lo, hi = res.interval
    half = (hi[-1000:, j] - lo[-1000:, j]) / 2
    outside = np.abs(res.mean[-1000:, j] - true_bronc) > half
    assert outside.sum() > 500


def test_criterion_8_drift_tracking():
    n = 10_000
    truth = ground_truth("R3", n_cases=n).drift[0].cpt_at(np.arange(n))[:, 0, 0]
    mae = {}
    sd = {}
    for level in ("L1", "L2", "L3"):
        errs, sds = [], []
        for seed in range(5):
            res = run_experiment(ExperimentConfig("R3", "O1", "P1", level, seed=seed, n_cases=n))
            j = [t.table for t in res.tracked].index("smoke")
            traj = res.mean[:, j]
            errs.append(np.mean(np.abs(traj[4999:] - truth[4999:])))
            sds.append(np.std(traj[7999:], ddof=1))
        mae[level] = np.mean(errs)
        sd[level] = np.mean(sds)
    print(f"mae {mae} sd {sd}")
    assert mae["L2"] < mae["L1"]
    assert sd["L3"] > sd["L2"]


def test_criterion_9_determinism_and_round_trip(tmp_path, chest):
    cells = [ExperimentConfig.parse(c, seed=SEED) for c in ("R2,O2,P2,L3", "R3,O1,P1,L2")]
    a = run_grid(cells, tmp_path / "a")
    b = run_grid(cells, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()

    res = run_experiment(cells[0])
    text = serialize_network(res.final_network)
    net = parse_network(text)
    assert serialize_network(net) == text
    np.testing.assert_array_equal(np.concatenate([net.cpts[x].ravel() for x in net.names]),
                                  np.concatenate([res.final_network.cpts[x].ravel() for x in net.names]))

    snap = serialize_snapshot(res.final_network, res.tables)
    net2, tables = parse_snapshot(snap)
    assert serialize_snapshot(net2, tables) == snap
    for name, t in res.tables.items():
        np.testing.assert_array_equal(tables[name].counts, t.counts)
        assert tables[name].mode == t.mode and tables[name].q == t.q
    assert parse_network(serialize_network(chest)).equals(chest, tol=0.0)
