import numpy as np
import pytest
from helpers import random_evidence, random_network

from adaptnet import _kernels
from adaptnet.inference import (
    StateSpaceTooLarge,
    ZeroProbabilityEvidence,
    brute_force_joint,
    evidence_probability,
    family_posterior,
    family_posteriors,
    marginal_from_joint,
    min_fill_order,
    posterior_marginal,
)
from adaptnet.network import make_network
from adaptnet.simulation import GroundTruth, sample_cases

# P(tub | asia=yes, xray=yes) worked by hand:
# 0.05*0.98 / (0.05*0.98 + 0.95*(0.055*0.98 + 0.945*0.05)) with P(lung) = 0.055
TUB_GIVEN_ASIA_XRAY = 0.049 / (0.049 + 0.95 * (0.055 * 0.98 + 0.945 * 0.05))


def test_root_prior(chest):
    np.testing.assert_allclose(posterior_marginal(chest, {}, "smoke").probs, [0.5, 0.5], atol=1e-15)


def test_direct_cpt_read(chest):
    np.testing.assert_allclose(posterior_marginal(chest, {"either": "yes"}, "xray").probs, [0.98, 0.02])


def test_tub_given_asia_and_xray(chest):
    p = posterior_marginal(chest, {"asia": "yes", "xray": "yes"}, "tub")
    assert p["yes"] == pytest.approx(TUB_GIVEN_ASIA_XRAY, abs=1e-12)
    joint = brute_force_joint(chest, {"asia": "yes", "xray": "yes"})
    oracle = marginal_from_joint(chest, joint, {"asia": "yes", "xray": "yes"}, ["tub"])
    np.testing.assert_allclose(p.probs, oracle, atol=1e-12)


def test_fully_observed_family(chest):
    e = {"dysp": "yes", "either": "no", "bronc": "yes", "smoke": "no"}
    fp = family_posterior(chest, e, "dysp")
    expected = np.zeros((4, 2))
    expected[chest.config_index("dysp", ("no", "yes")), 0] = 1.0
    np.testing.assert_allclose(fp.table, expected, atol=1e-15)


def test_parents_observed_child_free(chest):
    fp = family_posterior(chest, {"either": "yes", "bronc": "no"}, "dysp")
    j = chest.config_index("dysp", ("yes", "no"))
    np.testing.assert_allclose(fp.table[j], chest.cpts["dysp"][j], atol=1e-15)
    assert fp.table.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.delete(fp.table, j, axis=0) == 0.0)


def test_family_smoke_dysp_against_enumeration(chest):
    e = {"smoke": "yes", "dysp": "yes"}
    fp = family_posterior(chest, e, "dysp")
    oracle = marginal_from_joint(chest, brute_force_joint(chest, e), e, ["either", "bronc", "dysp"])
    np.testing.assert_allclose(fp.table, oracle.reshape(-1, 2), atol=1e-12)


def test_brute_force_single_root():
    net = make_network({"r": ["a", "b"]}, {}, {"r": [[0.3, 0.7]]})
    j = brute_force_joint(net)
    np.testing.assert_allclose(j.probs, [0.3, 0.7])


def test_brute_force_all_observed(chest):
    case = {"asia": "no", "tub": "no", "smoke": "yes", "lung": "yes", "bronc": "no",
            "either": "yes", "xray": "yes", "dysp": "yes"}
    j = brute_force_joint(chest, case)
    assert j.variables == ()
    assert float(j.probs) == 1.0


def test_brute_force_matches_forward_sampling(chest):
    n = 10**6
    x = sample_cases(GroundTruth(chest), n, np.random.default_rng(5))
    j = brute_force_joint(chest)
    for i, name in enumerate(chest.names):
        p = marginal_from_joint(chest, j, {}, [name])[0]
        freq = np.mean(x[:, i] == 0)
        assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / n) + 1e-12, name


def test_state_space_guard():
    net = make_network({f"v{i}": [str(s) for s in range(10)] for i in range(8)}, {},
                       {f"v{i}": [[0.1] * 10] for i in range(8)})
    with pytest.raises(StateSpaceTooLarge):
        brute_force_joint(net)


def test_zero_probability_evidence(chest):
    e = {"tub": "yes", "either": "no"}
    for query in (
        lambda: posterior_marginal(chest, e, "xray"),
        lambda: family_posterior(chest, e, "xray"),
        lambda: family_posteriors(chest, e),
        lambda: brute_force_joint(chest, e),
    ):
        with pytest.raises(ZeroProbabilityEvidence):
            query()
    assert evidence_probability(chest, e) == 0.0


def test_observed_variable_is_degenerate(chest, rng):
    for name in chest.names:
        for s in chest.variable(name).states:
            e = {name: s}
            p = posterior_marginal(chest, e, name)
            assert p[s] == 1.0


def test_min_fill_prefers_simplicial():
    # eliminating the hub of a star first would connect all three leaves
    order = min_fill_order([(0, 1), (0, 2), (0, 3)], [0, 1, 2, 3])
    assert order[0] != 0


@pytest.mark.parametrize("seed", range(25))
def test_random_networks_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, int(rng.integers(4, 9)), zero_frac=0.1 if seed % 3 == 0 else 0.0)
    for _ in range(4):
        e = random_evidence(rng, net)
        try:
            joint = brute_force_joint(net, e)
        except ZeroProbabilityEvidence:
            with pytest.raises(ZeroProbabilityEvidence):
                family_posteriors(net, e)
            continue
        batch = family_posteriors(net, e)
        for name in net.names:
            fp = family_posterior(net, e, name)
            oracle = marginal_from_joint(net, joint, e, list(net.parents[name]) + [name])
            np.testing.assert_allclose(fp.table, oracle.reshape(fp.table.shape), atol=1e-9)
            np.testing.assert_allclose(batch[name].table, fp.table, atol=1e-12)
            assert fp.table.sum() == pytest.approx(1.0, abs=1e-9)
            np.testing.assert_allclose(fp.parent_config_mass, fp.table.sum(axis=1), atol=1e-12)
            marg = posterior_marginal(net, e, name).probs
            np.testing.assert_allclose(fp.child_marginal(), marg, atol=1e-9)


def test_ve_fallback_for_large_state_space(monkeypatch, rng):
    from adaptnet import inference

    net = random_network(rng, 7)
    e = random_evidence(rng, net)
    dense = family_posteriors(net, e)
    monkeypatch.setattr(inference, "DENSE_LIMIT", 1)
    ve = family_posteriors(net, e)
    for name in net.names:
        np.testing.assert_allclose(ve[name].table, dense[name].table, atol=1e-12)


def test_numpy_and_numba_family_kernels_agree(chest, rng):
    from adaptnet.inference import CompiledNetwork

    nets = [chest] + [random_network(rng, 7) for _ in range(10)]
    for net in nets:
        comp = CompiledNetwork(net)
        for _ in range(5):
            ev = net.evidence_indices(random_evidence(rng, net))
            args = (comp.cards, comp.par_idx, comp.par_stride, comp.n_par, comp.cpt_off, comp.cpt_flat, ev)
            fam_np, tot_np = _kernels._dense_family_joint_np(*args)
            fam_nb, tot_nb = _kernels._dense_family_joint_nb(*args)
            assert tot_nb == pytest.approx(tot_np, rel=1e-12)
            np.testing.assert_allclose(fam_nb, fam_np, rtol=1e-12, atol=1e-300)

