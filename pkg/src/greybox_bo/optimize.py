"""Box-constrained multi-start minimization and the nested solver for the optimistic auxiliary problem.

Local descent is projected gradient with Armijo backtracking and
Barzilai-Borwein trial steps.  Gradients are finite differences taken in unit
coordinates of each row's box.  All starts advance in lockstep so that a
vectorized objective sees one batch per gradient or line-search round.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .composite import CompositeProblem, _predict_batch, clip_to_bounds

logger = logging.getLogger(__name__)

MAX_ITER = 200
GTOL = 1e-6
FTOL = 1e-9
FD_STEP = 1e-6
ARMIJO_C = 1e-4
MAX_BACKTRACK = 40
BACKTRACK_BATCH = 8


@dataclass(frozen=True)
class BoxDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(~(lo < hi)):
            raise ValueError("box needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class OptimizeReport:
    argmin: np.ndarray
    value: float
    starts_used: int
    converged_starts: int
    evaluations: int


def _vectorize(fun):
    def batch(X):
        return np.array([fun(x) for x in X], dtype=float)
    return batch


def _safe(vals):
    vals = np.asarray(vals, dtype=float)
    return np.where(np.isfinite(vals), vals, np.inf)


def projected_gradient(fun, Z0, width, max_iter=MAX_ITER, gtol=GTOL, ftol=None):
    """Minimize ``fun`` over the unit box from each row of ``Z0``.

    ``fun(Z, rows)`` maps an ``(m, d)`` array of unit coordinates, whose
    i-th row belongs to start ``rows[i]``, to ``(m,)`` values.  Coordinates
    with ``width == 0`` stay fixed.

    Backtracking evaluates the full step with its first ``BACKTRACK_BATCH``
    halvings in one call, then further halvings of every still-pending row
    in batches; the accepted step is the first halving that satisfies
    Armijo, exactly as in sequential backtracking.

    Returns (Z, values, converged, evaluations).
    """
    ftol = FTOL if ftol is None else ftol
    Z = np.clip(np.array(Z0, dtype=float), 0.0, 1.0)
    n, d = Z.shape
    free = np.broadcast_to(np.asarray(width) > 0, (n, d))
    evals = 0
    all_rows = np.arange(n)
    fz = _safe(fun(Z, all_rows))
    evals += n
    active = np.isfinite(fz)
    converged = np.zeros(n, dtype=bool)
    step = np.full(n, np.nan)
    prev_z = np.zeros_like(Z)
    prev_g = np.zeros_like(Z)
    eye = np.eye(d)

    for it in range(max_iter):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        Zr = Z[rows]
        # finite-difference gradient, one-sided at box edges
        up = np.minimum(Zr + FD_STEP, 1.0)
        dn = np.maximum(Zr - FD_STEP, 0.0)
        P = (Zr[:, None, :] * (1 - eye) + up[:, :, None] * eye).reshape(-1, d)
        M = (Zr[:, None, :] * (1 - eye) + dn[:, :, None] * eye).reshape(-1, d)
        rr = np.repeat(rows, d)
        vals = _safe(fun(np.vstack([P, M]), np.concatenate([rr, rr])))
        evals += 2 * rows.size * d
        fp = vals[: rows.size * d].reshape(rows.size, d)
        fm = vals[rows.size * d:].reshape(rows.size, d)
        G = np.where(free[rows], (fp - fm) / (up - dn), 0.0)
        bad = ~np.all(np.isfinite(G), axis=1)
        G[bad] = 0.0
        pg = np.clip(Zr - G, 0.0, 1.0) - Zr
        pg_norm = np.max(np.abs(pg), axis=1)
        done = (pg_norm <= gtol) | bad
        converged[rows[done & ~bad]] = True
        active[rows[done]] = False
        keep = ~done
        rows, Zr, G = rows[keep], Zr[keep], G[keep]
        if rows.size == 0:
            break

        # trial step: BB after the first iteration, else a 0.1 unit move
        t = np.empty(rows.size)
        first = np.isnan(step[rows])
        gmax = np.max(np.abs(G), axis=1)
        t[first] = 0.1 / gmax[first]
        if np.any(~first):
            s = Zr[~first] - prev_z[rows[~first]]
            y = G[~first] - prev_g[rows[~first]]
            sy = np.einsum("ij,ij->i", s, y)
            ss = np.einsum("ij,ij->i", s, s)
            bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), 2.0 * step[rows[~first]])
            t[~first] = bb
        t = np.clip(t, 1e-12, 1e6 / np.maximum(gmax, 1e-300))

        f0 = fz[rows]
        accepted = np.zeros(rows.size, dtype=bool)
        Znew = Zr.copy()
        fnew = f0.copy()
        pending = np.arange(rows.size)
        tried = 0
        while pending.size and tried < MAX_BACKTRACK:
            k = min(BACKTRACK_BATCH + (tried == 0), MAX_BACKTRACK - tried)
            halves = 0.5 ** np.arange(k)
            tk = t[pending, None] * halves[None, :]  # (p, k)
            Zt = np.clip(Zr[pending, None, :] - tk[:, :, None] * G[pending, None, :], 0.0, 1.0)
            ft = _safe(fun(Zt.reshape(-1, d), np.repeat(rows[pending], k))).reshape(-1, k)
            evals += pending.size * k
            decrease = np.einsum("pd,pkd->pk", G[pending], Zt - Zr[pending, None, :])
            ok = ft <= f0[pending, None] + ARMIJO_C * decrease
            hit = ok.any(axis=1)
            first = np.argmax(ok, axis=1)
            idx = pending[hit]
            Znew[idx] = Zt[hit, first[hit]]
            fnew[idx] = ft[hit, first[hit]]
            t[idx] = tk[hit, first[hit]]
            accepted[idx] = True
            t[pending[~hit]] *= 0.5 ** k
            pending = pending[~hit]
            tried += k
        stalled = ~accepted
        prev_z[rows] = Zr
        prev_g[rows] = G
        step[rows] = t
        small = accepted & (f0 - fnew <= ftol * (1.0 + np.abs(f0)))
        Z[rows[accepted]] = Znew[accepted]
        fz[rows[accepted]] = fnew[accepted]
        converged[rows[small | stalled]] = True
        active[rows[small | stalled]] = False
    return Z, fz, converged, evals


def _best_index(values, points):
    finite = np.flatnonzero(np.isfinite(values))
    if finite.size == 0:
        return None
    vmin = values[finite].min()
    ties = finite[values[finite] == vmin]
    order = np.lexsort(points[ties].T[::-1])
    return int(ties[order[0]])


def minimize_box(objective, domain: BoxDomain, starts: int = 50, seed: int = 0, *,
                 batch: bool = False, initial_points=None, max_iter: int = MAX_ITER,
                 gtol: float = GTOL) -> OptimizeReport:
    """Multi-start projected-gradient minimization over a box.

    Start points are ``starts`` uniform draws from ``default_rng(seed)``,
    preceded by any ``initial_points``.  With ``batch=True`` the objective
    takes an ``(n, d)`` array and returns ``(n,)`` values.
    """
    if starts < 1 and initial_points is None:
        raise ValueError("need at least one start")
    fun = objective if batch else _vectorize(objective)
    lo, hi = domain.lower, domain.upper
    width = hi - lo
    rng = np.random.default_rng(seed)
    Z0 = rng.uniform(size=(starts, domain.dim))
    if initial_points is not None:
        extra = (np.atleast_2d(np.asarray(initial_points, dtype=float)) - lo) / width
        Z0 = np.vstack([np.clip(extra, 0.0, 1.0), Z0])

    def unit_fun(Z, rows):
        return fun(np.clip(lo + Z * width, lo, hi))

    Z, vals, conv, evals = projected_gradient(unit_fun, Z0, width, max_iter, gtol)
    X = np.clip(lo + Z * width, lo, hi)
    i = _best_index(vals, X)
    if i is None:
        raise FloatingPointError("objective is non-finite at every start")
    return OptimizeReport(X[i].copy(), float(vals[i]), Z0.shape[0], int(conv.sum()), evals)


def confidence_box(problem: CompositeProblem, X, kappa: float, counter=None):
    """Optimistic bounds on y per design row, intersected with feasibility bounds.

    Rows where the lower bound would exceed the upper bound collapse to the
    clipped GP mean.
    """
    pred = _predict_batch(problem, X, counter)
    sd = np.sqrt(pred.variance)
    lo_f, hi_f = problem.y_lower, problem.y_upper
    lo = np.maximum(pred.raw_mean - kappa * sd, lo_f)
    hi = np.minimum(pred.raw_mean + kappa * sd, hi_f)
    bad = lo > hi
    if bad.any():
        logger.debug("collapsing %d empty confidence intervals to the clipped mean", int(bad.sum()))
        c = clip_to_bounds(pred.raw_mean, lo_f, hi_f)
        lo = np.where(bad, c, lo)
        hi = np.where(bad, c, hi)
    return lo, hi


def _inner_solve(problem, X, lo, hi, counter=None):
    """For each row of X, minimize f(x, y) over the box [lo, hi] from its midpoint."""
    width = hi - lo
    gx = np.asarray(problem.g(X), dtype=float)

    def fun(Z, rows):
        Y = np.clip(lo[rows] + Z * width[rows], lo[rows], hi[rows])
        if counter is not None:
            counter.whitebox_evals += Y.shape[0]
        return gx[rows] + np.asarray(problem.h(X[rows], Y), dtype=float)

    Z0 = np.full(lo.shape, 0.5)
    Z, vals, _, _ = projected_gradient(fun, Z0, width)
    Y = np.clip(lo + Z * width, lo, hi)
    return Y, vals


def solve_opbo_auxiliary(problem: CompositeProblem, kappa: float, starts: int = 50,
                         seed: int = 0, counter=None, initial_points=None):
    """Minimize f(x, y) jointly over x in the design box and y in the optimistic box.

    Solved as nested box problems: the outer search over x sees the value of
    the inner minimization over y.  Returns ``(x, y, value)`` with
    ``value == f(x, y)``.
    """
    domain = BoxDomain(problem.lower, problem.upper)

    def outer(X):
        if counter is not None:
            counter.af_probes += X.shape[0]
        lo, hi = confidence_box(problem, X, kappa, counter)
        _, vals = _inner_solve(problem, X, lo, hi, counter)
        return vals

    rep = minimize_box(outer, domain, starts, seed, batch=True, initial_points=initial_points)
    x = rep.argmin[None, :]
    lo, hi = confidence_box(problem, x, kappa)
    Y, _ = _inner_solve(problem, x, lo, hi)
    y = Y[0]
    value = float(problem.f(x, Y)[0])
    return rep.argmin, y, value

