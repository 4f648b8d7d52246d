"""Composite objectives f(x, y(x)) = g(x) + h(x, y) over a DAG of GP-modelled intermediates.

White-box callables are vectorized over rows: ``g(X) -> (n,)`` and
``h(X, Y) -> (n,)`` for ``X`` of shape ``(n, d_x)`` and ``Y`` of shape
``(n, d_y)``.  The column order of ``Y`` is the order of
``CompositeProblem.nodes``; evaluation order is given by :func:`topo_order`.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .gp import GpModel

FD_REL_STEP = 1e-3
FD_MIN_STEP = 1e-8


class CycleError(ValueError):
    pass


class UntrainedNodeError(RuntimeError):
    pass


class NonFiniteProbeError(FloatingPointError):
    def __init__(self, component, name):
        super().__init__(f"white-box h is non-finite when probing intermediate {component} ({name})")
        self.component = component


@dataclass
class OpCounter:
    """Structural operation counts; one instance per trial or experiment."""

    gp_posterior_calls: int = 0
    gp_mean_queries: int = 0
    gp_var_queries: int = 0
    whitebox_evals: int = 0
    posterior_draws: int = 0
    af_probes: int = 0
    system_samples: int = 0

    def snapshot(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def reset(self):
        for f in fields(self):
            setattr(self, f.name, 0)


@dataclass(frozen=True)
class IntermediateNode:
    name: str
    x_inputs: tuple = ()
    y_inputs: tuple = ()
    lower_bound: float = -np.inf
    upper_bound: float = np.inf
    model: GpModel | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_inputs", tuple(int(i) for i in self.x_inputs))
        object.__setattr__(self, "y_inputs", tuple(self.y_inputs))
        if not self.lower_bound < self.upper_bound:
            raise ValueError(f"node {self.name}: lower bound must be below upper bound")
        if not self.x_inputs and not self.y_inputs:
            raise ValueError(f"node {self.name} has no inputs")


@dataclass(frozen=True)
class CompositeProblem:
    name: str
    lower: np.ndarray
    upper: np.ndarray
    nodes: tuple
    g: Callable
    h: Callable
    sampler: Callable | None = None
    f_star: float | None = None
    x_names: tuple = ()
    _order: tuple = field(default=(), repr=False, compare=False)
    _plan: tuple = field(default=(), repr=False, compare=False)
    _box_tol: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("design box needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "nodes", tuple(self.nodes))
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate node names")
        for n in self.nodes:
            for up in n.y_inputs:
                if up not in names:
                    raise ValueError(f"node {n.name} references unknown node {up}")
            if any(i < 0 or i >= lo.size for i in n.x_inputs):
                raise ValueError(f"node {n.name} references a design index outside the box")
        object.__setattr__(self, "_order", tuple(_topo(self.nodes)))
        # per node in evaluation order: (node, column in y, x columns, upstream y columns)
        by_name = {n.name: n for n in self.nodes}
        object.__setattr__(self, "_plan", tuple(
            (by_name[name], names.index(name), np.array(by_name[name].x_inputs, dtype=int),
             np.array([names.index(u) for u in by_name[name].y_inputs], dtype=int))
            for name in self._order))
        tol = 1e-12 * (hi - lo)
        object.__setattr__(self, "_box_tol", (lo - tol, hi + tol))

    @property
    def dx(self) -> int:
        return self.lower.size

    @property
    def dy(self) -> int:
        return len(self.nodes)

    @property
    def node_names(self) -> list:
        return [n.name for n in self.nodes]

    @property
    def y_lower(self) -> np.ndarray:
        return np.array([n.lower_bound for n in self.nodes])

    @property
    def y_upper(self) -> np.ndarray:
        return np.array([n.upper_bound for n in self.nodes])

    def index(self, name) -> int:
        return self.node_names.index(name)

    def node_inputs(self, node: IntermediateNode, X, Y):
        """GP input matrix for ``node``: design columns then upstream y columns."""
        X = np.atleast_2d(X)
        cols = [X[:, list(node.x_inputs)]]
        if node.y_inputs:
            Y = np.atleast_2d(Y)
            cols.append(Y[:, [self.index(u) for u in node.y_inputs]])
        return np.hstack(cols)

    def node_input_bounds(self, node: IntermediateNode):
        """Declared input box for ``node`` (NaN where the data range must be used)."""
        k = len(node.y_inputs)
        lo = np.concatenate([self.lower[list(node.x_inputs)], np.full(k, np.nan)])
        hi = np.concatenate([self.upper[list(node.x_inputs)], np.full(k, np.nan)])
        return lo, hi

    def with_models(self, models: dict) -> "CompositeProblem":
        nodes = tuple(replace(n, model=models.get(n.name, n.model)) for n in self.nodes)
        return replace(self, nodes=nodes)

    def f(self, X, Y) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.asarray(self.g(X), float) + np.asarray(self.h(X, np.atleast_2d(Y)), float)

    def sample(self, x) -> np.ndarray:
        if self.sampler is None:
            raise RuntimeError(f"problem {self.name} has no system sampler")
        return np.asarray(self.sampler(np.asarray(x, dtype=float)), dtype=float)

    def in_box(self, X) -> bool:
        X = np.atleast_2d(X)
        return bool(np.all(X >= self.lower) and np.all(X <= self.upper))


def _topo(nodes):
    names = [n.name for n in nodes]
    deps = {n.name: set(n.y_inputs) for n in nodes}
    children = {name: [] for name in names}
    for n in nodes:
        for up in n.y_inputs:
            children[up].append(n.name)
    indeg = {name: len(d) for name, d in deps.items()}
    ready = [name for name in names if indeg[name] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        name = heapq.heappop(ready)
        order.append(name)
        for c in children[name]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(order) != len(names):
        raise CycleError(f"intermediate graph has a cycle: {_find_cycle(deps)}")
    return order


def _find_cycle(deps):
    state = {}
    stack = []

    def visit(u):
        state[u] = 1
        stack.append(u)
        for v in sorted(deps[u]):
            if state.get(v) == 1:
                return stack[stack.index(v):] + [v]
            if v not in state:
                found = visit(v)
                if found:
                    return found
        stack.pop()
        state[u] = 2
        return None

    for u in sorted(deps):
        if u not in state:
            cyc = visit(u)
            if cyc:
                return " -> ".join(reversed(cyc))
    return "?"


def topo_order(problem: CompositeProblem) -> list:
    """Node names, each after all of its upstream nodes; ties broken by name."""
    return list(problem._order)


def clip_to_bounds(m, lower, upper):
    """Move values outside [lower, upper] onto the violated bound (exactly)."""
    m = np.asarray(m, dtype=float)
    return np.minimum(np.maximum(m, lower), upper)


@dataclass(frozen=True)
class Intermediates:
    """Per-node GP predictions at a batch of design points (rows)."""

    raw_mean: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    clipped_low: np.ndarray
    clipped_high: np.ndarray

    @property
    def clipped(self) -> np.ndarray:
        return self.clipped_low | self.clipped_high


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != dim:
        raise ValueError(f"expected design points of dimension {dim}, got {X.shape[1]}")
    return X, single


def _check_in_box(problem, X):
    lo, hi = problem._box_tol
    if (X < lo).any() or (X > hi).any():
        raise ValueError("design point outside the design box")


def _predict_batch(problem: CompositeProblem, X, counter=None, check_box=True) -> Intermediates:
    if check_box:
        _check_in_box(problem, X)
    n = X.shape[0]
    dy = problem.dy
    raw = np.zeros((n, dy))
    clipped = np.zeros((n, dy))
    var = np.zeros((n, dy))
    lo_mask = np.zeros((n, dy), dtype=bool)
    hi_mask = np.zeros((n, dy), dtype=bool)
    for node, j, xc, yc in problem._plan:
        if node.model is None:
            raise UntrainedNodeError(f"intermediate {node.name} has no trained model")
        Q = np.hstack([X[:, xc], clipped[:, yc]]) if yc.size else X[:, xc]
        m, v = node.model.predict(Q)
        raw[:, j] = m
        var[:, j] = v
        lo_mask[:, j] = m < node.lower_bound
        hi_mask[:, j] = m > node.upper_bound
        clipped[:, j] = clip_to_bounds(m, node.lower_bound, node.upper_bound)
    if counter is not None:
        counter.gp_posterior_calls += n * dy
        counter.gp_mean_queries += n * dy
        counter.gp_var_queries += n * dy
    return Intermediates(raw, clipped, var, lo_mask, hi_mask)


def predict_intermediates(problem: CompositeProblem, x, counter=None) -> Intermediates:
    """Nested GP prediction with feasibility clipping.

    Nodes are evaluated in topological order; each node's query uses the
    clipped means of its upstream nodes.  Variances are the node GP variances
    at that same query, so the implied covariance is diagonal.
    """
    X, single = _as_batch(x, problem.dx)
    out = _predict_batch(problem, X, counter)
    if single:
        return Intermediates(*(getattr(out, f.name)[0] for f in fields(out)))
    return out


@dataclass(frozen=True)
class MomentEstimate:
    mean: np.ndarray | float
    stdev: np.ndarray | float
    clipped_mask: np.ndarray | None = None


def linear_moments(a, b, means, cov) -> MomentEstimate:
    """Exact moments of a^T y + b for y ~ N(means, cov)."""
    a = np.asarray(a, dtype=float).ravel()
    m = np.asarray(means, dtype=float).ravel()
    S = np.asarray(cov, dtype=float)
    if S.ndim == 1:
        S = np.diag(S)
    if a.shape != m.shape or S.shape != (a.size, a.size):
        raise ValueError("dimension mismatch in linear_moments")
    var = float(a @ S @ a)
    return MomentEstimate(float(a @ m + b), float(np.sqrt(max(var, 0.0))))


def _mc_batch(problem, X, S, seed, counter=None, chunk_rows=200_000):
    pred = _predict_batch(problem, X, counter)
    n, dy = pred.raw_mean.shape
    z = np.random.default_rng(seed).standard_normal((S, dy))
    sd = np.sqrt(pred.variance)
    lo, hi = problem.y_lower, problem.y_upper
    gx = np.asarray(problem.g(X), dtype=float)
    means = np.empty(n)
    stdevs = np.empty(n)
    step = max(1, chunk_rows // S)
    for start in range(0, n, step):
        sl = slice(start, min(n, start + step))
        k = sl.stop - sl.start
        Ys = pred.raw_mean[None, sl, :] + sd[None, sl, :] * z[:, None, :]
        Ys = clip_to_bounds(Ys, lo, hi).reshape(S * k, dy)
        Xs = np.broadcast_to(X[None, sl, :], (S, k, X.shape[1])).reshape(S * k, -1)
        fs = np.asarray(problem.h(Xs, Ys), dtype=float).reshape(S, k) + gx[None, sl]
        mu = fs.mean(axis=0)
        means[sl] = mu
        stdevs[sl] = np.sqrt(np.sum((fs - mu) ** 2, axis=0) / (S - 1))
    if counter is not None:
        counter.whitebox_evals += S * n
        counter.posterior_draws += S * n
    return MomentEstimate(means, stdevs, pred.clipped)


def mc_moments(problem: CompositeProblem, x, S: int = 100, seed: int = 0, counter=None) -> MomentEstimate:
    """Monte-Carlo moments of f with samples clipped into the feasibility box.

    The same standard-normal draws are used for every row of ``x``, so a
    fixed seed gives a deterministic surface.
    """
    if S < 2:
        raise ValueError("Monte-Carlo moments need S >= 2")
    X, single = _as_batch(x, problem.dx)
    out = _mc_batch(problem, X, S, seed, counter)
    if single:
        return MomentEstimate(float(out.mean[0]), float(out.stdev[0]), out.clipped_mask[0])
    return out


def _fd_steps(y0):
    return np.maximum(np.abs(y0) * FD_REL_STEP, FD_MIN_STEP)


def _jacobian_batch(problem, X, Y0, lo_mask, hi_mask, counter=None, recorder=None):
    """Finite-difference gradient of h in y; returns (J, h(X, Y0))."""
    n, dy = Y0.shape
    eps = _fd_steps(Y0)
    lo, hi = problem.y_lower, problem.y_upper
    # one-sided away from an active (or touching) bound
    fwd = lo_mask | (Y0 - eps < lo)
    bwd = (hi_mask | (Y0 + eps > hi)) & ~fwd
    yp = np.where(bwd, Y0, Y0 + eps)
    ym = np.where(fwd, Y0, Y0 - eps)
    Yp = np.repeat(Y0[None], dy, axis=0)  # (dy, n, dy)
    Ym = Yp.copy()
    idx = np.arange(dy)
    Yp[idx, :, idx] = yp.T
    Ym[idx, :, idx] = ym.T
    rows = np.concatenate([Y0[None], Yp, Ym], axis=0).reshape((2 * dy + 1) * n, dy)
    Xr = np.broadcast_to(X[None], (2 * dy + 1, n, X.shape[1])).reshape(-1, X.shape[1])
    if recorder is not None:
        recorder(rows.copy())
    vals = np.asarray(problem.h(Xr, rows), dtype=float).reshape(2 * dy + 1, n)
    if counter is not None:
        counter.whitebox_evals += (2 * dy + 1) * n
    bad = ~np.isfinite(vals)
    if bad.any():
        comp = int(np.argwhere(bad)[0][0])
        i = 0 if comp == 0 else (comp - 1) % dy
        raise NonFiniteProbeError(i, problem.node_names[i])
    h0 = vals[0]
    J = (vals[1:dy + 1].T - vals[dy + 1:].T) / (yp - ym)
    return J, h0


def bois_jacobian(problem: CompositeProblem, x, y0, clipped=None, counter=None, recorder=None):
    """Gradient of h w.r.t. y at ``y0`` by finite differences.

    Steps are ``max(|y0| * 1e-3, 1e-8)``.  Components flagged in ``clipped``
    (a ``(low, high)`` mask pair, or a single mask meaning "low") are probed
    one-sided, stepping away from the active bound.
    """
    X, single = _as_batch(x, problem.dx)
    Y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    if clipped is None:
        lo_mask = np.zeros_like(Y0, dtype=bool)
        hi_mask = lo_mask.copy()
    elif isinstance(clipped, tuple):
        lo_mask, hi_mask = (np.atleast_2d(np.asarray(c, dtype=bool)) for c in clipped)
    else:
        m = np.atleast_2d(np.asarray(clipped, dtype=bool))
        lo_mask = m & np.isclose(Y0, problem.y_lower)
        hi_mask = m & ~lo_mask
    J, _ = _jacobian_batch(problem, X, Y0, lo_mask, hi_mask, counter, recorder)
    return J[0] if single else J


def _bois_batch(problem, X, counter=None, offset=None):
    pred = _predict_batch(problem, X, counter)
    y_hat = pred.mean
    y_ref = y_hat if offset is None else y_hat + offset
    J, h_ref = _jacobian_batch(problem, X, y_ref, pred.clipped_low, pred.clipped_high, counter)
    gx = np.asarray(problem.g(X), dtype=float)
    mean = np.einsum("ij,ij->i", J, y_hat) + gx + h_ref - np.einsum("ij,ij->i", J, y_ref)
    stdev = np.sqrt(np.einsum("ij,ij->i", J * J, pred.variance))
    return MomentEstimate(mean, stdev, pred.clipped)


def bois_moments(problem: CompositeProblem, x, counter=None, offset=None) -> MomentEstimate:
    """Closed-form moments of f from a first-order expansion of h around the clipped means.

    ``offset`` shifts the linearization point away from the clipped means
    (default: coincident).
    """
    X, single = _as_batch(x, problem.dx)
    out = _bois_batch(problem, X, counter, offset)
    if single:
        return MomentEstimate(float(out.mean[0]), float(out.stdev[0]), out.clipped_mask[0])
    return out
