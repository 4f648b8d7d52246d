"""Single-output Gaussian-process regression with anisotropic Matern kernels.

The public surface is deliberately small:

* :func:`kernel_eval` / :func:`kernel_matrix` evaluate the Matern-3/2 or 5/2
  covariance with per-dimension length scales and an output scale.
* :func:`log_marginal_likelihood` and :func:`fit_hyperparameters` operate on a
  :class:`Dataset` exactly as given (no transforms).
* :func:`train_gp` wraps the above with unit-box input scaling and output
  standardization and returns an immutable :class:`GpModel`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, get_lapack_funcs, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

logger = logging.getLogger(__name__)

JITTER = 1e-10
NU_VALUES = (1.5, 2.5)
_LOG_2PI = np.log(2.0 * np.pi)


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a covariance matrix is not numerically positive definite."""


class GpFitError(RuntimeError):
    """Raised when no hyperparameter restart yields a finite likelihood."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        X = np.array(self.inputs, dtype=float, ndmin=2)
        y = np.array(self.outputs, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} input rows but {y.shape[0]} outputs")
        if y.shape[0] < 1:
            raise ValueError("dataset must hold at least one sample")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)

    @property
    def size(self) -> int:
        return self.outputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class KernelConfig:
    length_scales: np.ndarray
    output_scale: float = 1.0
    noise: float = 0.0
    nu: float = 2.5

    def __post_init__(self):
        ls = np.array(self.length_scales, dtype=float).ravel()
        if ls.size == 0 or np.any(~np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("length scales must be finite and strictly positive")
        if not self.output_scale > 0:
            raise ValueError("output_scale must be positive")
        if not self.noise >= 0:
            raise ValueError("noise must be nonnegative")
        if self.nu not in NU_VALUES:
            raise ValueError(f"nu must be one of {NU_VALUES}, got {self.nu}")
        ls.setflags(write=False)
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "output_scale", float(self.output_scale))
        object.__setattr__(self, "noise", float(self.noise))

    @property
    def dim(self) -> int:
        return self.length_scales.shape[0]

    def to_log_params(self) -> np.ndarray:
        return np.log(np.concatenate([self.length_scales, [self.output_scale, self.noise]]))

    @classmethod
    def from_log_params(cls, p, nu=2.5) -> "KernelConfig":
        p = np.exp(np.asarray(p, dtype=float))
        return cls(p[:-2], p[-2], p[-1], nu)


def _matern_shape(r, nu):
    """Unit-amplitude Matern correlation as a function of scaled distance."""
    if nu == 1.5:
        a = np.sqrt(3.0) * r
        return (1.0 + a) * np.exp(-a)
    a = np.sqrt(5.0) * r
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def _scaled_diffs(A, B, length_scales):
    return (A[:, None, :] - B[None, :, :]) / length_scales


def kernel_matrix(cfg: KernelConfig, A, B) -> np.ndarray:
    """Cross-covariance matrix between the rows of ``A`` and ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != cfg.dim or B.shape[1] != cfg.dim:
        raise ValueError(f"expected points of dimension {cfg.dim}")
    D = _scaled_diffs(A, B, cfg.length_scales)
    r = np.sqrt(np.einsum("ijk,ijk->ij", D, D))
    return cfg.output_scale * _matern_shape(r, cfg.nu)


def kernel_eval(cfg: KernelConfig, x, x2) -> float:
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape[0] != cfg.dim or x2.shape[0] != cfg.dim:
        raise ValueError(f"expected points of dimension {cfg.dim}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x2))):
        raise ValueError("non-finite kernel input")
    r = np.sqrt(np.sum(((x - x2) / cfg.length_scales) ** 2))
    return float(cfg.output_scale * _matern_shape(r, cfg.nu))


def _factor(K):
    try:
        return cholesky(K, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FactorizationError(f"covariance factorization failed: {exc}") from exc


def log_marginal_likelihood(data: Dataset, cfg: KernelConfig) -> float:
    """Zero-mean GP log evidence of ``data.outputs`` under ``cfg``."""
    K = kernel_matrix(cfg, data.inputs, data.inputs)
    K[np.diag_indices_from(K)] += cfg.noise + JITTER
    L = _factor(K)
    alpha = cho_solve((L, True), data.outputs)
    return float(
        -0.5 * data.outputs @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * data.size * _LOG_2PI
    )


def _lml_and_grad(log_params, X, y, nu):
    """LML and its gradient w.r.t. (log length scales, log output scale, log noise)."""
    d = X.shape[1]
    ls = np.exp(log_params[:d])
    s = np.exp(log_params[d])
    noise = np.exp(log_params[d + 1])
    D2 = _scaled_diffs(X, X, ls) ** 2  # (l, l, d)
    r = np.sqrt(D2.sum(axis=-1))
    C = _matern_shape(r, nu)
    K = s * C
    K[np.diag_indices_from(K)] += noise + JITTER
    L = _factor(K)
    alpha = cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * y.shape[0] * _LOG_2PI
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(y.shape[0]))
    # dk/dlog(theta_j) = s * c'(r) * (diff_j / theta_j)^2
    if nu == 1.5:
        dC = 3.0 * np.exp(-np.sqrt(3.0) * r)
    else:
        a = np.sqrt(5.0) * r
        dC = (5.0 / 3.0) * (1.0 + a) * np.exp(-a)
    grad = np.empty(d + 2)
    grad[:d] = 0.5 * np.einsum("ij,ijk->k", W * (s * dC), D2)
    grad[d] = 0.5 * np.sum(W * (s * C))
    grad[d + 1] = 0.5 * noise * np.trace(W)
    return lml, grad


@dataclass(frozen=True)
class SearchSpace:
    """Box over hyperparameters; each entry is a (low, high) pair."""

    length_scale: tuple = (1e-2, 1e1)
    output_scale: tuple = (1e-2, 1e2)
    noise: tuple = (1e-6, 1e-1)

    def __post_init__(self):
        for name in ("length_scale", "output_scale", "noise"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"search space bounds for {name} must be positive and ordered")

    def log_bounds(self, d):
        ls = [np.log(self.length_scale)] * d
        return ls + [np.log(self.output_scale), np.log(self.noise)]


def fit_hyperparameters(
    data: Dataset,
    search_space: SearchSpace | None = None,
    restarts: int = 5,
    seed: int = 0,
    nu: float = 2.5,
    candidates=(),
) -> KernelConfig:
    """Maximize the log marginal likelihood over ``search_space``.

    Multi-start L-BFGS-B in log-space with analytic gradients.  Starts are a
    Latin hypercube of ``restarts`` points plus any ``candidates`` (e.g. the
    previous optimum as a warm start).  The returned configuration is never
    worse than any starting point.
    """
    if data.size < 2:
        raise ValueError("hyperparameter fitting needs at least two samples")
    space = search_space or SearchSpace()
    d = data.dim
    bounds = np.array(space.log_bounds(d))
    starts = []
    for cand in candidates:
        p = cand.to_log_params() if isinstance(cand, KernelConfig) else np.asarray(cand, float)
        starts.append(np.clip(p, bounds[:, 0], bounds[:, 1]))
    if restarts > 0:
        lhs = qmc.LatinHypercube(d=d + 2, seed=np.random.default_rng(seed))
        starts.extend(qmc.scale(lhs.random(restarts), bounds[:, 0], bounds[:, 1]))

    X, y = data.inputs, data.outputs

    def neg(p):
        try:
            lml, grad = _lml_and_grad(p, X, y, nu)
        except FactorizationError:
            return 1e25, np.zeros_like(p)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(p)
        return -lml, -grad

    best_p, best_val = None, np.inf
    diagnostics = []
    for p0 in starts:
        v0, _ = neg(p0)
        if v0 < best_val:
            best_p, best_val = p0, v0
        try:
            res = minimize(neg, p0, jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": 200})
        except (ValueError, FloatingPointError) as exc:
            diagnostics.append(f"start {p0.tolist()}: {exc}")
            continue
        diagnostics.append(f"start {np.round(p0, 3).tolist()}: -lml={res.fun:.6g}")
        if np.isfinite(res.fun) and res.fun < best_val:
            best_p, best_val = res.x, res.fun
    if best_p is None or best_val >= 1e25:
        raise GpFitError("no restart produced a finite log marginal likelihood", diagnostics)
    return KernelConfig.from_log_params(np.clip(best_p, bounds[:, 0], bounds[:, 1]), nu)


@dataclass(frozen=True, eq=False)
class GpModel:
    """Trained GP; immutable after construction.

    ``kernel`` acts on unit-box-scaled inputs and standardized outputs; the
    scaling is undone in :meth:`predict`.  ``chol_factor`` and ``weights``
    refer to the scaled training data.
    """

    dataset: Dataset
    kernel: KernelConfig
    input_offset: np.ndarray
    input_scale: np.ndarray
    output_mean: float
    output_std: float
    chol_factor: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    scaled_inputs: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.dataset.dim

    def scale_inputs(self, X):
        return (np.asarray(X, dtype=float) - self.input_offset) / self.input_scale

    def predict(self, X, return_var=True):
        """Posterior mean and variance (original units) at the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"query dimension {X.shape[1]} != model dimension {self.dim}")
        # kernel_matrix without its input validation; this is the acquisition hot path
        D = _scaled_diffs(self.scale_inputs(X), self.scaled_inputs, self.kernel.length_scales)
        Ks = self.kernel.output_scale * _matern_shape(np.sqrt(np.einsum("ijk,ijk->ij", D, D)), self.kernel.nu)
        mean = self.output_mean + self.output_std * (Ks @ self.weights)
        if not return_var:
            return mean
        V = _lower_solve(self.chol_factor, Ks.T)
        var = self.kernel.output_scale - np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var, 0.0) * self.output_std**2


_TRTRS = get_lapack_funcs(("trtrs",), (np.zeros((1, 1)),))[0]


def _lower_solve(L, B):
    """``solve_triangular(L, B, lower=True)`` for float64 without argument checks."""
    if L.flags.f_contiguous:
        x, info = _TRTRS(L, B, lower=1, trans=0)
    else:
        x, info = _TRTRS(L.T, B, lower=0, trans=1)
    if info != 0:
        return solve_triangular(L, B, lower=True, check_finite=False)
    return x


def build_model(
    data: Dataset,
    cfg: KernelConfig,
    input_offset=None,
    input_scale=None,
    output_mean=0.0,
    output_std=1.0,
) -> GpModel:
    """Condition a GP with fixed hyperparameters on ``data``."""
    d = data.dim
    offset = np.zeros(d) if input_offset is None else np.asarray(input_offset, float)
    scale = np.ones(d) if input_scale is None else np.asarray(input_scale, float)
    Z = (data.inputs - offset) / scale
    t = (data.outputs - output_mean) / output_std
    K = kernel_matrix(cfg, Z, Z)
    K[np.diag_indices_from(K)] += cfg.noise + JITTER
    L = _factor(K)
    w = cho_solve((L, True), t)
    for arr in (offset, scale, L, w, Z):
        arr.setflags(write=False)
    return GpModel(data, cfg, offset, scale, float(output_mean), float(output_std), L, w, Z)


def train_gp(
    data: Dataset,
    bounds=None,
    nu: float = 2.5,
    restarts: int = 3,
    seed: int = 0,
    warm_start: KernelConfig | None = None,
    search_space: SearchSpace | None = None,
) -> GpModel:
    """Scale, fit hyperparameters and condition a GP on ``data``.

    ``bounds`` is a ``(lower, upper)`` pair defining the unit box for inputs;
    columns without finite bounds fall back to the data range.
    """
    X = data.inputs
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    if bounds is not None:
        blo, bhi = (np.asarray(b, dtype=float) for b in bounds)
        ok = np.isfinite(blo) & np.isfinite(bhi) & (bhi > blo)
        lo = np.where(ok, blo, lo)
        hi = np.where(ok, bhi, hi)
    span = hi - lo
    span = np.where(span > 0, span, np.maximum(np.abs(lo), 1.0))
    y = data.outputs
    mu = float(y.mean())
    sd = float(y.std())
    if not sd > 1e-12 * max(1.0, abs(mu)):
        sd = 1.0
    scaled = Dataset((X - lo) / span, (y - mu) / sd)
    if data.size >= 2:
        cands = [warm_start] if warm_start is not None else []
        cfg = fit_hyperparameters(scaled, search_space, restarts, seed, nu, cands)
    else:
        cfg = warm_start or KernelConfig(np.ones(data.dim), 1.0, (search_space or SearchSpace()).noise[0], nu)
    return build_model(data, cfg, lo, span, mu, sd)


def posterior(model: GpModel, query) -> tuple[float, float]:
    q = np.asarray(query, dtype=float).ravel()
    if q.shape[0] != model.dim:
        raise ValueError(f"query dimension {q.shape[0]} != model dimension {model.dim}")
    mean, var = model.predict(q[None, :])
    return float(mean[0]), float(var[0])
