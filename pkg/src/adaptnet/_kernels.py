"""Hot loops of the adaptation pipeline, in numba and plain numpy.

Two kernels run once per processed case:

* ``dense_family_joint`` enumerates the unobserved part of the joint state
  space and accumulates the unnormalized family tables P(x_v, pa_v, e) for
  every variable at once.
* ``moment_match`` applies the Dirichlet-mixture moment matching update to
  every row of one experience table.

The numba versions are used when numba imports and ``ADAPTNET_NUMBA`` is not
set to ``0``. Both versions are always importable so they can be compared.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

ESS_MAX = 1e12

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f
        return deco

USE_NUMBA = _HAVE_NUMBA and os.environ.get("ADAPTNET_NUMBA", "1") not in ("0", "false", "no")
if not _HAVE_NUMBA and os.environ.get("ADAPTNET_NUMBA") == "1":  # pragma: no cover
    warnings.warn("ADAPTNET_NUMBA=1 but numba is not importable; using numpy kernels")


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# family tables by dense enumeration


@njit(cache=True)
def _dense_family_joint_nb(cards, par_idx, par_stride, n_par, cpt_off, cpt_flat, evidence):
    n_vars = cards.shape[0]
    fam = np.zeros_like(cpt_flat)
    x = evidence.copy()
    free = np.empty(n_vars, dtype=np.int64)
    n_free = 0
    space = 1
    for v in range(n_vars):
        if evidence[v] < 0:
            free[n_free] = v
            n_free += 1
            space *= cards[v]
    idxs = np.empty(n_vars, dtype=np.int64)
    total = 0.0
    for t in range(space):
        r = t
        for j in range(n_free - 1, -1, -1):
            v = free[j]
            x[v] = r % cards[v]
            r //= cards[v]
        p = 1.0
        for v in range(n_vars):
            cfg = 0
            for j in range(n_par[v]):
                cfg += x[par_idx[v, j]] * par_stride[v, j]
            idx = cpt_off[v] + cfg * cards[v] + x[v]
            idxs[v] = idx
            p *= cpt_flat[idx]
            if p == 0.0:
                break
        if p == 0.0:
            continue
        total += p
        for v in range(n_vars):
            fam[idxs[v]] += p
    return fam, total


def _dense_family_joint_np(cards, par_idx, par_stride, n_par, cpt_off, cpt_flat, evidence):
    n_vars = len(cards)
    operands = []
    for v in range(n_vars):
        ps = [int(p) for p in par_idx[v, : n_par[v]]]
        size = int(np.prod([cards[p] for p in ps], dtype=np.int64)) * int(cards[v])
        table = cpt_flat[cpt_off[v]: cpt_off[v] + size]
        operands += [table.reshape([int(cards[p]) for p in ps] + [int(cards[v])]), ps + [v]]
        if evidence[v] >= 0:
            onehot = np.zeros(int(cards[v]))
            onehot[evidence[v]] = 1.0
            operands += [onehot, [v]]
    joint = np.einsum(*operands, list(range(n_vars)), optimize=False)
    total = float(joint.sum())
    fam = np.empty_like(cpt_flat)
    for v in range(n_vars):
        ps = [int(p) for p in par_idx[v, : n_par[v]]]
        m = np.einsum(joint, list(range(n_vars)), ps + [v])
        fam[cpt_off[v]: cpt_off[v] + m.size] = m.ravel()
    return fam, total


def dense_family_joint(cards, par_idx, par_stride, n_par, cpt_off, cpt_flat, evidence):
    """Unnormalized family tables (flat, CPT layout) and P(evidence)."""
    if USE_NUMBA:
        return _dense_family_joint_nb(cards, par_idx, par_stride, n_par, cpt_off, cpt_flat, evidence)
    return _dense_family_joint_np(cards, par_idx, par_stride, n_par, cpt_off, cpt_flat, evidence)


# ---------------------------------------------------------------------------
# moment matching


@njit(cache=True)
def _moment_match_nb(counts, w):
    n_rows, k = counts.shape
    out = counts.copy()
    mstar = np.empty(k)
    v = np.empty(k)
    rest = np.empty(k)
    slack = np.empty(k)
    for r in range(n_rows):
        wsum = 0.0
        hot = -1
        n_pos = 0
        for i in range(k):
            wsum += w[r, i]
            if w[r, i] > 0.0:
                n_pos += 1
                hot = i
        if wsum == 0.0:
            continue
        if n_pos == 1 and w[r, hot] == 1.0:
            out[r, hot] += 1.0
            continue
        w0 = max(1.0 - wsum, 0.0)
        s = 0.0
        for i in range(k):
            s += counts[r, i]
        s1 = s + 1.0
        s2 = s + 2.0
        # complements as sums of the other coordinates, never 1 - x
        for i in range(k):
            acc = 0.0
            for j in range(k):
                if j != i:
                    acc += counts[r, j]
            rest[i] = acc
        for i in range(k):
            mi = counts[r, i] / s
            mstar[i] = (mi * s + w[r, i] + mi * w0) / s1
        # v[i] is the mixture variance; slack[i] = m*(1 - m*) - v, summed per
        # component so that the refit below needs no subtraction
        for i in range(k):
            mi = counts[r, i] / s
            wrest = 0.0
            for j in range(k):
                if j != i:
                    wrest += w[r, j]
            d = (counts[r, i] * wrest - w[r, i] * rest[i]) / (s * s1)
            within = counts[r, i] * rest[i] / (s * s)
            acc = w0 * (within / s1 + d * d)
            sl = w0 * within * s / s1
            for j in range(k):
                if i == j:
                    within = (counts[r, i] + 1.0) * rest[i] / (s1 * s1)
                else:
                    within = counts[r, i] * (rest[i] + 1.0) / (s1 * s1)
                if i == j:
                    d = (wrest + w0 * rest[i] / s) / s1
                else:
                    d = -(w[r, i] + mi * w0) / s1
                acc += w[r, j] * (within / s2 + d * d)
                sl += w[r, j] * within * s1 / s2
            v[i] = acc
            slack[i] = sl
        num = 0.0
        den = 0.0
        for i in range(k):
            num += mstar[i] * slack[i]
            den += mstar[i] * v[i]
        if den > 0.0:
            snew = num / den
            if snew > ESS_MAX:
                snew = ESS_MAX
        else:
            snew = ESS_MAX
        for i in range(k):
            out[r, i] = snew * mstar[i]
    return out


def _moment_match_np(counts, w):
    counts = np.asarray(counts, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n_rows, k = counts.shape
    wsum = w.sum(axis=1)
    active = wsum > 0.0
    out = counts.copy()
    if not active.any():
        return out
    hot = (np.count_nonzero(w > 0.0, axis=1) == 1) & (w.max(axis=1) == 1.0)
    out[hot, w[hot].argmax(axis=1)] += 1.0
    g = active & ~hot
    if not g.any():
        return out
    a = counts[g]
    wg = w[g]
    ws = wsum[g][:, None]
    w0 = np.maximum(1.0 - ws, 0.0)
    rest = a @ (1.0 - np.eye(k))
    s = a.sum(axis=1, keepdims=True)
    m = a / s
    s1 = s + 1.0
    s2 = s + 2.0
    mstar = (m * s + wg + m * w0) / s1
    eye = np.eye(k)[None]
    # [r, j, i]: coordinate i of the component that added a count to state j
    within = np.where(eye > 0.0, ((a + 1.0) * rest)[:, None, :], (a * (rest + 1.0))[:, None, :])
    within = within / (s1 * s1)[:, :, None]
    wrest = wg @ (1.0 - np.eye(k))
    d = np.where(eye > 0.0, (wrest + w0 * rest / s)[:, None, :], -(wg + w0 * m)[:, None, :]) / s1[:, :, None]
    within0 = a * rest / (s * s)
    v = w0 * (within0 / s1 + ((a * wrest - wg * rest) / (s * s1)) ** 2)
    v += np.einsum("rj,rji->ri", wg, within / s2[:, :, None] + d**2)
    # m*(1 - m*) - v without subtraction
    slack = w0 * within0 * s / s1 + np.einsum("rj,rji->ri", wg, within) * (s1 / s2)
    num = (mstar * slack).sum(axis=1)
    den = (mstar * v).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        snew = np.where(den > 0.0, num / den, ESS_MAX)
    snew = np.minimum(snew, ESS_MAX)
    out[g] = snew[:, None] * mstar
    return out


def moment_match(counts, w):
    """New counts for every row given family weights ``w[r, i] = P(a_i, config_r | E)``."""
    if USE_NUMBA:
        return _moment_match_nb(np.ascontiguousarray(counts, dtype=np.float64),
                                np.ascontiguousarray(w, dtype=np.float64))
    return _moment_match_np(counts, w)
