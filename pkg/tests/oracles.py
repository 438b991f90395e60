"""Independent reference computations used to cross-check the library.

Everything here recomputes results by brute force (grids, enumeration,
generic LP feasibility) without touching the code paths under test.
"""

import numpy as np

from eqodds.core import CellProbabilities
from eqodds.posthoc import RateStatistics


def counting_rates_oracle(dataset, values):
    """Per-cell loop oracle: acceptance sums over explicit counts."""
    rates = np.full((2, 2), np.nan)
    counts = np.zeros((2, 2), dtype=int)
    sums = np.zeros((2, 2))
    for i in range(len(dataset)):
        y, a = int(dataset.labels[i]), int(dataset.attr[i])
        counts[y, a] += 1
        sums[y, a] += values[i]
    for y in (0, 1):
        for a in (0, 1):
            if counts[y, a]:
                rates[y, a] = sums[y, a] / counts[y, a]
    return rates, counts


def random_rate_statistics(rng, min_cell=0.02):
    """Random base-rule rates and a random cell table bounded away from zero."""
    rates = rng.random((2, 2))
    cells = rng.random(4) + 4 * min_cell
    cells = cells / cells.sum()
    return RateStatistics(rates, CellProbabilities(cells.reshape(2, 2)))


def derived_grid_minima(stats, tolerance, n_steps=101, slack=0.0101,
                        chunk=512):
    """Brute-force minima of the derived-rule objective over an accept grid.

    Scans every acceptance table with entries on a uniform grid and returns
    ``(strict_min, relaxed_min)``: the best objective among tables whose
    cross-group gap is within ``tolerance`` (strict) and within
    ``tolerance + slack`` (relaxed, absorbing grid discretization of the
    constraint). Group pairs are enumerated separately and combined by
    broadcasting, since the objective is additive across groups and only
    the gap couples them.
    """
    grid = np.linspace(0.0, 1.0, n_steps)
    p1, p0 = np.meshgrid(grid, grid, indexing="ij")
    p1, p0 = p1.ravel(), p0.ravel()

    g = stats.rates
    t = stats.cells.table
    f, tp, obj = {}, {}, {}
    for a in (0, 1):
        f[a] = p1 * g[0, a] + p0 * (1.0 - g[0, a])
        tp[a] = p1 * g[1, a] + p0 * (1.0 - g[1, a])
        obj[a] = t[0, a] * f[a] + t[1, a] * (1.0 - tp[a])

    strict_cap = tolerance + 1e-12
    relaxed_cap = tolerance + slack

    # sort both groups by their false positive coordinate so each chunk of
    # group-0 points only meets a narrow group-1 window; the constraint is
    # still evaluated exactly inside the window
    o0 = np.argsort(f[0], kind="stable")
    o1 = np.argsort(f[1], kind="stable")
    f0, t0, c0 = f[0][o0], tp[0][o0], obj[0][o0]
    f1, t1, c1 = f[1][o1], tp[1][o1], obj[1][o1]

    best_strict, best_relaxed = np.inf, np.inf
    m = f0.shape[0]
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        w_lo = int(np.searchsorted(f1, f0[lo] - relaxed_cap, side="left"))
        w_hi = int(np.searchsorted(f1, f0[hi - 1] + relaxed_cap, side="right"))
        if w_lo >= w_hi:
            continue
        df = np.abs(f0[lo:hi, None] - f1[None, w_lo:w_hi])
        dt = np.abs(t0[lo:hi, None] - t1[None, w_lo:w_hi])
        total = c0[lo:hi, None] + c1[None, w_lo:w_hi]
        ok = (df <= strict_cap) & (dt <= strict_cap)
        if ok.any():
            best_strict = min(best_strict, float(total[ok].min()))
        ok = (df <= relaxed_cap) & (dt <= relaxed_cap)
        if ok.any():
            best_relaxed = min(best_relaxed, float(total[ok].min()))
    return best_strict, best_relaxed


def point_in_hull(point, vertices, tol=1e-9):
    """Convex-hull membership via LP feasibility (scipy), independent of
    any affine reasoning in the library."""
    from scipy.optimize import linprog

    vertices = np.asarray(vertices, dtype=float)
    k = vertices.shape[0]
    a_eq = np.vstack([vertices.T, np.ones(k)])
    b_eq = np.append(np.asarray(point, dtype=float), 1.0)
    res = linprog(np.zeros(k), A_eq=a_eq, b_eq=b_eq, bounds=[(0, 1)] * k,
                  method="highs")
    if res.status == 0:
        return True
    # retry with a tolerance blow-up to separate genuine exteriors
    res = linprog(np.zeros(k), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(-tol, 1 + tol)] * k, method="highs")
    return res.status == 0


def kkt_elimination_solve(sigma, rhs, constraint):
    """Equality-constrained quadratic minimum by variable elimination.

    Minimizes w' sigma w - 2 w' rhs subject to constraint' w = 0 by solving
    for the largest-coefficient variable and reducing to an unconstrained
    quadratic in the rest. Independent of any closed-form multiplier.
    """
    c = np.asarray(constraint, dtype=float)
    k = int(np.argmax(np.abs(c)))
    if abs(c[k]) < 1e-14:
        return np.linalg.solve(sigma, rhs)
    n = c.shape[0]
    free = [j for j in range(n) if j != k]
    basis = np.zeros((n, n - 1))
    for col, j in enumerate(free):
        basis[j, col] = 1.0
        basis[k, col] = -c[j] / c[k]
    reduced = basis.T @ sigma @ basis
    u = np.linalg.solve(reduced, basis.T @ rhs)
    return basis @ u
