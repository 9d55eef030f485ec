"""Time the numba and numpy kernels against each other.

    python3 benchmarks/bench_kernels.py [--cases N] [--repeat R]

Reports per-call kernel timings on the chest-clinic network and the wall time
of one full experiment cell under each backend.
"""

import argparse
import time

import numpy as np

from adaptnet import _kernels
from adaptnet.inference import CompiledNetwork
from adaptnet.network import chest_clinic
from adaptnet.simulation import ExperimentConfig, experiment_cases, mask_indices, run_experiment


def per_call(fn, args, repeat):
    fn(*args)  # warm-up, includes compilation for numba
    t = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t) / repeat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cases", type=int, default=10_000)
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()

    net = chest_clinic()
    comp = CompiledNetwork(net)
    cfg = ExperimentConfig("R1", "O2", "P1", "L3", n_cases=args.cases)
    ev = mask_indices(net, experiment_cases(cfg)[:1], "O2")[0]
    fam_args = (comp.cards, comp.par_idx, comp.par_stride, comp.n_par, comp.cpt_off, comp.cpt_flat, ev)
    rng = np.random.default_rng(0)
    counts = rng.uniform(0.5, 20.0, size=(4, 2))
    w = rng.dirichlet(np.ones(9))[:8].reshape(4, 2)

    rows = []
    for name, nb, py, a in (
        ("dense_family_joint", _kernels._dense_family_joint_nb, _kernels._dense_family_joint_np, fam_args),
        ("moment_match", _kernels._moment_match_nb, _kernels._moment_match_np, (counts, w)),
    ):
        rows.append((name, per_call(nb, a, args.repeat), per_call(py, a, args.repeat)))

    cell = []
    for flag in (True, False):
        _kernels.USE_NUMBA = flag
        t = time.perf_counter()
        run_experiment(cfg)
        cell.append(time.perf_counter() - t)

    print(f"{'kernel':<22}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, a, b in rows:
        print(f"{name:<22}{a * 1e6:>12.2f}{b * 1e6:>12.2f}{b / a:>10.1f}")
    print(f"{'cell ' + str(args.cases) + ' cases':<22}{cell[0]:>11.2f}s{cell[1]:>11.2f}s{cell[1] / cell[0]:>10.1f}")


if __name__ == "__main__":
    main()
