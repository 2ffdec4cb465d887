"""Independent reference computations shared by the test modules."""

import itertools

import numpy as np
from scipy.optimize import linprog

from wpflow.particles import (
    DomainSpec,
    ParticleConfig,
    discrete_energy,
    lambda_structure,
    subgradient_element,
    weighted_norm,
)


def fd_gradient(cfg, model, rel_eps=1e-6):
    """``N`` times the central difference of ``E_N`` in each coordinate."""
    x = cfg.positions
    N = cfg.N
    eps = rel_eps * float(np.min(cfg.interior_gaps))
    out = np.empty(N)
    for i in range(N):
        xp, xm = x.copy(), x.copy()
        xp[i] += eps
        xm[i] -= eps
        ep = discrete_energy(ParticleConfig(xp, DomainSpec.whole_line() if not cfg.domain.is_interval else
                                            DomainSpec.interval(cfg.domain.l)), model, check=False)
        em = discrete_energy(ParticleConfig(xm, DomainSpec.whole_line() if not cfg.domain.is_interval else
                                            DomainSpec.interval(cfg.domain.l)), model, check=False)
        out[i] = N * (ep - em) / (2 * eps)
    return out


def directional_violation(cfg, model, z, eps_list=(1e-3, 1e-4)):
    """Worst failure of ``E(x + s e_i) - E(x) >= s z_i / N - 10 s^2`` over ``s = +-eps``.

    Coordinates are skipped when the move would break the configuration.
    Returns a value <= 0 when every tested inequality holds.
    """
    x = cfg.positions
    N = cfg.N
    E0 = discrete_energy(cfg, model, check=False)
    worst = -np.inf
    movable = range(1, N - 1) if cfg.domain.pinned else range(N)
    for eps in eps_list:
        for i in movable:
            for s in (eps, -eps):
                y = x.copy()
                y[i] += s
                try:
                    c = cfg.with_positions(y)
                    _ = c.gaps
                except Exception:
                    continue
                lhs = discrete_energy(c, model, check=False) - E0
                rhs = s * z[i] / N - 10 * s * s
                worst = max(worst, rhs - lhs)
    return worst


def affine_parts(cfg, model, tie_tol=1e-9):
    """``z(lam) = b + A lam`` over the free weights, probed through unit weights."""
    free = lambda_structure(cfg, tie_tol).free
    k = len(free)
    b = subgradient_element(cfg, model, [0.0] * k, tie_tol).z
    A = np.empty((cfg.N, k))
    for j in range(k):
        e = [0.0] * k
        e[j] = 1.0
        A[:, j] = subgradient_element(cfg, model, e, tie_tol).z - b
    return b, A


def _chain_grid_min(b, A, q, boxes):
    """Exact minimum of ``sum_r |b_r + A_r lam|^q`` over a tensor grid.

    ``boxes[j]`` lists the candidate values of weight ``j``.  Every row of
    ``A`` touches at most three consecutive weights, so dynamic programming
    over pairs of consecutive weights enumerates the whole grid exactly.
    """
    k = A.shape[1]
    nz = A != 0
    rows_by_last = [[] for _ in range(k)]
    const = 0.0
    for r in range(A.shape[0]):
        cols = np.flatnonzero(nz[r])
        if cols.size == 0:
            const += abs(b[r]) ** q
            continue
        assert cols[-1] - cols[0] <= 2, "row couples non-adjacent weights"
        rows_by_last[cols[-1]].append(r)
    # cost(j, a, b_, c): rows ending at weight j, given values of j-2, j-1, j
    pad = [np.array([0.0])] * 2 + list(boxes)

    def stage_cost(j, v2, v1, v0):
        total = np.zeros(np.broadcast_shapes(v2.shape, v1.shape, v0.shape))
        for r in rows_by_last[j]:
            s = b[r] + A[r, j] * v0
            if j >= 1:
                s = s + A[r, j - 1] * v1
            if j >= 2:
                s = s + A[r, j - 2] * v2
            total = total + np.abs(s) ** q
        return total

    # value[a, c] over (lam_{j-1}, lam_j)
    value = None
    back = []
    for j in range(k):
        v2 = pad[j][:, None, None]
        v1 = pad[j + 1][None, :, None]
        v0 = pad[j + 2][None, None, :]
        cost = stage_cost(j, v2, v1, v0)
        if value is not None:
            cost = cost + value[:, :, None]
        arg = np.argmin(cost, axis=0)
        value = np.take_along_axis(cost, arg[None], axis=0)[0]
        back.append(arg)
    i1, i0 = np.unravel_index(np.argmin(value), value.shape)
    best = float(value[i1, i0]) + const
    idx = [0] * k
    idx[k - 1] = i0
    if k >= 2:
        idx[k - 2] = i1
    for j in range(k - 1, 1, -1):
        idx[j - 2] = back[j][idx[j - 1], idx[j]]
    lam = np.array([boxes[j][idx[j]] for j in range(k)])
    return best, lam


def brute_force_min_norm(cfg, model, step=0.01, zoom_levels=5):
    """Minimal ``(w, q)`` dual norm over the weight box by exhaustive grids.

    The first pass enumerates the whole ``step`` grid; each further pass
    enumerates a grid ten times finer around the previous optimum.
    Returns ``(norm on the step grid, refined norm, weights)``.
    """
    q = model.params.q
    b, A = affine_parts(cfg, model)
    N = cfg.N
    k = A.shape[1]
    if k == 0:
        v = weighted_norm(b, q)
        return v, v, np.zeros(0)
    n = int(round(1 / step)) + 1
    boxes = [np.linspace(0, 1, n)] * k
    val, lam = _chain_grid_min(b, A, q, boxes)
    coarse = (val / N) ** (1 / q)
    h = step
    for _ in range(zoom_levels):
        h /= 10
        boxes = [np.clip(lam[j] + h * np.arange(-20, 21), 0, 1) for j in range(k)]
        val, lam = _chain_grid_min(b, A, q, boxes)
    return coarse, (val / N) ** (1 / q), lam


def assignment_wp(x, y, p):
    """``W_p`` between two equal-size particle sets by an assignment LP."""
    n = len(x)
    cost = np.abs(np.subtract.outer(x, y)) ** p / n
    A_eq = []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1
        A_eq.append(row.ravel())
    for j in range(n):
        col = np.zeros((n, n))
        col[:, j] = 1
        A_eq.append(col.ravel())
    res = linprog(cost.ravel(), A_eq=np.array(A_eq), b_eq=np.ones(2 * n), bounds=(0, None), method="highs")
    return res.fun ** (1 / p)


def permutation_wp(x, y, p):
    n = len(x)
    best = min(np.sum(np.abs(np.asarray(x) - np.asarray(y)[list(s)]) ** p) for s in itertools.permutations(range(n)))
    return (best / n) ** (1 / p)


def manufactured_ties(rng, N, n_clusters, max_run=4, lo=0.5, hi=2.0):
    """Positions whose gap sequence contains runs of exactly equal gaps."""
    gaps = rng.uniform(lo, hi, N - 1)
    for _ in range(n_clusters):
        run = int(rng.integers(2, max_run + 2))
        start = int(rng.integers(0, max(1, N - run)))
        gaps[start:start + run] = rng.uniform(lo, hi)
    return np.concatenate(([0.0], np.cumsum(gaps)))
