import itertools

import numpy as np

from adaptnet.network import NetworkDef, Variable


def random_network(rng, n_nodes=6, max_parents=3, max_card=3, zero_frac=0.0):
    """Random DAG over ``n_nodes`` with Dirichlet(1) CPT columns."""
    variables = []
    parents = {}
    cpts = {}
    for i in range(n_nodes):
        k = int(rng.integers(2, max_card + 1))
        name = f"v{i}"
        variables.append(Variable(name, tuple(f"s{j}" for j in range(k))))
        n_par = int(rng.integers(0, min(i, max_parents) + 1))
        ps = sorted(rng.choice(i, size=n_par, replace=False).tolist()) if n_par else []
        parents[name] = tuple(f"v{p}" for p in ps)
        n_cfg = int(np.prod([variables[p].k for p in ps])) if ps else 1
        table = rng.dirichlet(np.ones(k), size=n_cfg)
        if zero_frac:
            table[rng.random(table.shape) < zero_frac] = 0.0
            table[table.sum(axis=1) == 0.0, 0] = 1.0
            table /= table.sum(axis=1, keepdims=True)
        cpts[name] = table
    return NetworkDef(tuple(variables), parents, cpts)


def random_evidence(rng, net, p_observe=0.4):
    ev = {}
    for v in net.variables:
        if rng.random() < p_observe:
            ev[v.name] = v.states[int(rng.integers(v.k))]
    return ev


def enumerate_configs(net):
    return itertools.product(*(range(v.k) for v in net.variables))
